#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ssrl/rng.hpp"
#include "ssrl/tensor.hpp"

namespace ssrl {

enum class Confidence { Confident, Unconfident };

struct GazePoint {
    double t_ms = 0.0;
    double x = 0.0;
    double y = 0.0;
};

/// One answer-reading episode: the gaze trajectory recorded while a
/// participant worked on a single question.
struct GazeRecord {
    std::vector<GazePoint> points;
    double screen_w = 0.0;
    double screen_h = 0.0;
    std::string question_id;
    std::optional<Confidence> label;

    void validate() const {
        if (points.empty()) throw DataError("gaze record '" + question_id + "': no points");
        if (screen_w <= 0.0 || screen_h <= 0.0)
            throw DataError("gaze record '" + question_id + "': non-positive screen extent");
        double prev = points.front().t_ms;
        for (const GazePoint& p : points) {
            if (p.t_ms < prev)
                throw DataError("gaze record '" + question_id + "': timestamps decrease");
            prev = p.t_ms;
            if (p.x < 0.0 || p.x > screen_w || p.y < 0.0 || p.y > screen_h)
                throw DataError("gaze record '" + question_id + "': point off screen");
        }
    }
};

inline constexpr std::size_t kImageSize = 64;
inline constexpr std::size_t kImageMargin = 2;  // trajectory lives in the central 60x60

/// Gaze raster, channels-first [3, 64, 64]: red ramps 0 -> 1 with normalized
/// time, green is 0.5 on the path, blue ramps 1 -> 0; background is black.
using GazeImage = Tensor<float>;

enum class ImageTransformKind { None, Rotate45, ReflectY, ReflectX };

inline const char* image_transform_name(ImageTransformKind k) {
    switch (k) {
        case ImageTransformKind::None: return "none";
        case ImageTransformKind::Rotate45: return "rotate45";
        case ImageTransformKind::ReflectY: return "reflect_y";
        case ImageTransformKind::ReflectX: return "reflect_x";
    }
    return "?";
}

inline constexpr std::size_t kImagePretextClasses = 4;

namespace detail {

/// All integer pixels on the segment from (c0,r0) to (c1,r1), inclusive,
/// ordered from the start point (Bresenham).
inline std::vector<std::pair<int, int>> line_pixels(int c0, int r0, int c1, int r1) {
    std::vector<std::pair<int, int>> px;
    const int dc = std::abs(c1 - c0), dr = -std::abs(r1 - r0);
    const int sc = c0 < c1 ? 1 : -1, sr = r0 < r1 ? 1 : -1;
    int err = dc + dr, c = c0, r = r0;
    while (true) {
        px.emplace_back(c, r);
        if (c == c1 && r == r1) break;
        const int e2 = 2 * err;
        if (e2 >= dr) {
            err += dr;
            c += sc;
        }
        if (e2 <= dc) {
            err += dc;
            r += sr;
        }
    }
    return px;
}

inline void put_pixel(GazeImage& img, int c, int r, double frac) {
    img.at(0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(frac);
    img.at(1, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = 0.5f;
    img.at(2, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(1.0 - frac);
}

} // namespace detail

/// Draws the trajectory as a connected polyline. Screen coordinates map
/// affinely into the margin frame ([2, 61] per axis), so the raster depends
/// only on coordinate ratios, not absolute screen units. Overlapping pixels
/// take the color of the latest pass (last write wins).
inline GazeImage rasterize_gaze(const GazeRecord& rec) {
    rec.validate();
    GazeImage img({3, kImageSize, kImageSize});
    const double usable = static_cast<double>(kImageSize - 2 * kImageMargin - 1);  // 59
    auto to_col = [&](double x) {
        return static_cast<int>(kImageMargin) + static_cast<int>(std::lround(x / rec.screen_w * usable));
    };
    auto to_row = [&](double y) {
        return static_cast<int>(kImageMargin) + static_cast<int>(std::lround(y / rec.screen_h * usable));
    };
    const double t0 = rec.points.front().t_ms;
    const double dur = rec.points.back().t_ms - t0;
    const std::size_t n = rec.points.size();
    auto frac_of = [&](std::size_t i) {
        if (dur > 0.0) return (rec.points[i].t_ms - t0) / dur;
        return n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    };
    if (n == 1) {
        detail::put_pixel(img, to_col(rec.points[0].x), to_row(rec.points[0].y), 0.0);
        return img;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto px = detail::line_pixels(to_col(rec.points[i].x), to_row(rec.points[i].y),
                                            to_col(rec.points[i + 1].x), to_row(rec.points[i + 1].y));
        const double f0 = frac_of(i), f1 = frac_of(i + 1);
        for (std::size_t j = 0; j < px.size(); ++j) {
            const double s = px.size() > 1 ? static_cast<double>(j) / static_cast<double>(px.size() - 1) : 0.0;
            detail::put_pixel(img, px[j].first, px[j].second, f0 + s * (f1 - f0));
        }
    }
    return img;
}

/// Rotation by `deg` anticlockwise about the image center (31.5, 31.5),
/// decomposed into three shears (horizontal, vertical, horizontal) with
/// nearest-integer shifts. Each shear copies whole pixels — no blending —
/// fills vacated cells with background and clips pixels pushed outside the
/// frame. A naive single-pass resample drops or duplicates pixels of thin
/// polylines (>10% mass drift at 45°); shears shift rows and columns rigidly,
/// so mass is exact up to clipping and rotating back by -deg undoes each
/// shift in turn.
inline GazeImage rotate_image(const GazeImage& img, double deg) {
    if (img.shape() != Shape{3, kImageSize, kImageSize})
        throw ShapeError("rotate_image: expected [3,64,64], got " + shape_str(img.shape()));
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double alpha = -std::tan(th / 2.0);
    const double beta = std::sin(th);
    const double half = (static_cast<double>(kImageSize) - 1.0) / 2.0;
    const long n = static_cast<long>(kImageSize);

    // (x, y) -> (x + alpha*y, y): shift each row horizontally as a unit.
    const auto shear_x = [&](const GazeImage& src) {
        GazeImage dst({3, kImageSize, kImageSize});
        for (long r = 0; r < n; ++r) {
            const long shift = std::lround(alpha * (half - static_cast<double>(r)));
            const long lo = std::max(0L, -shift), hi = std::min(n, n - shift);
            for (long col = lo; col < hi; ++col)
                for (std::size_t ch = 0; ch < 3; ++ch)
                    dst.at(ch, static_cast<std::size_t>(r), static_cast<std::size_t>(col + shift)) =
                        src.at(ch, static_cast<std::size_t>(r), static_cast<std::size_t>(col));
        }
        return dst;
    };
    // (x, y) -> (x, y + beta*x): shift each column vertically; y points up,
    // so a positive shift moves pixels to smaller row indices.
    const auto shear_y = [&](const GazeImage& src) {
        GazeImage dst({3, kImageSize, kImageSize});
        for (long col = 0; col < n; ++col) {
            const long shift = std::lround(beta * (static_cast<double>(col) - half));
            const long lo = std::max(0L, shift), hi = std::min(n, n + shift);
            for (long r = lo; r < hi; ++r)
                for (std::size_t ch = 0; ch < 3; ++ch)
                    dst.at(ch, static_cast<std::size_t>(r - shift), static_cast<std::size_t>(col)) =
                        src.at(ch, static_cast<std::size_t>(r), static_cast<std::size_t>(col));
        }
        return dst;
    };
    return shear_x(shear_y(shear_x(img)));
}

inline GazeImage apply_image_transform(const GazeImage& img, ImageTransformKind kind) {
    if (img.shape() != Shape{3, kImageSize, kImageSize})
        throw ShapeError("image transform: expected [3,64,64], got " + shape_str(img.shape()));
    switch (kind) {
        case ImageTransformKind::None:
            return img;
        case ImageTransformKind::Rotate45:
            return rotate_image(img, 45.0);
        case ImageTransformKind::ReflectY: {  // (x,y) -> (-x,y): mirror columns
            GazeImage out({3, kImageSize, kImageSize});
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t r = 0; r < kImageSize; ++r)
                    for (std::size_t col = 0; col < kImageSize; ++col)
                        out.at(ch, r, col) = img.at(ch, r, kImageSize - 1 - col);
            return out;
        }
        case ImageTransformKind::ReflectX: {  // (x,y) -> (x,-y): mirror rows
            GazeImage out({3, kImageSize, kImageSize});
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t r = 0; r < kImageSize; ++r)
                    for (std::size_t col = 0; col < kImageSize; ++col)
                        out.at(ch, r, col) = img.at(ch, kImageSize - 1 - r, col);
            return out;
        }
    }
    throw ShapeError("unknown image transform");
}

/// Pretext dataset over rasters [N, 3, 64, 64]: every image receives one of
/// the four image transformations, class counts equal up to a remainder of
/// one and shuffled so class order is independent of image order.
struct ImagePretextData {
    Tensor<float> x;
    std::vector<int> y;
};

inline ImagePretextData build_image_pretext_dataset(const Tensor<float>& images,
                                                    std::uint64_t seed) {
    if (images.rank() != 4 || images.extent(1) != 3 || images.extent(2) != kImageSize ||
        images.extent(3) != kImageSize)
        throw ShapeError("image pretext dataset: expected [N,3,64,64], got " +
                         shape_str(images.shape()));
    const std::size_t n = images.extent(0);
    if (n == 0) throw ShapeError("image pretext dataset: empty image list");
    ImagePretextData out;
    out.x = Tensor<float>(images.shape());
    out.y.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        out.y[i] = static_cast<int>(i % kImagePretextClasses);
    Rng label_rng = make_rng(derive_seed(seed, 0x696d67ULL));
    shuffle(out.y, label_rng);
    const std::size_t px = 3 * kImageSize * kImageSize;
    for (std::size_t i = 0; i < n; ++i) {
        GazeImage img({3, kImageSize, kImageSize});
        std::copy(images.data() + i * px, images.data() + (i + 1) * px, img.data());
        const GazeImage t =
            apply_image_transform(img, static_cast<ImageTransformKind>(out.y[i]));
        std::copy(t.data(), t.data() + px, out.x.data() + i * px);
    }
    return out;
}

/// Record-level counterpart of rotate_image for feature extraction on
/// oversampled samples: rotates the points `deg` anticlockwise (screen y
/// grows downward) about the screen center and clamps them back onto the
/// screen so the record stays valid.
inline GazeRecord rotate_gaze(const GazeRecord& rec, double deg) {
    rec.validate();
    const double th = deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    GazeRecord out = rec;
    for (GazePoint& p : out.points) {
        const double u = p.x - rec.screen_w / 2.0;
        const double v = rec.screen_h / 2.0 - p.y;  // y-up
        p.x = std::clamp(rec.screen_w / 2.0 + u * c - v * s, 0.0, rec.screen_w);
        p.y = std::clamp(rec.screen_h / 2.0 - (u * s + v * c), 0.0, rec.screen_h);
    }
    return out;
}

/// Oversampling unit: `copies` rasters, each the source rotated once by 5°
/// anticlockwise. Which sources get oversampled is the fold-balancing
/// procedure's concern, not this function's.
inline std::vector<GazeImage> oversample_rotate5(const GazeImage& img, std::size_t copies) {
    if (copies < 1) throw ShapeError("oversample: need at least one copy");
    std::vector<GazeImage> out;
    out.reserve(copies);
    const GazeImage rotated = rotate_image(img, 5.0);
    for (std::size_t i = 0; i < copies; ++i) out.push_back(rotated);
    return out;
}

// ---- external interfaces ----

/// Reads `t_ms,x,y,screen_w,screen_h,question_id,label` rows into one record
/// per question id (rows must be contiguous per question and time-ordered).
inline std::vector<GazeRecord> read_gaze_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open gaze csv '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw DataError("gaze csv '" + path + "': empty file");
    if (line.ends_with('\r')) line.pop_back();
    if (line != "t_ms,x,y,screen_w,screen_h,question_id,label")
        throw DataError("gaze csv '" + path + "': unexpected header '" + line + "'");
    std::vector<GazeRecord> records;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string fields[7];
        for (int i = 0; i < 7; ++i)
            if (!std::getline(row, fields[i], i < 6 ? ',' : '\n'))
                throw DataError("gaze csv '" + path + "' line " + std::to_string(line_no) +
                                ": expected 7 fields");
        GazePoint p;
        double sw = 0.0, sh = 0.0;
        try {
            p.t_ms = std::stod(fields[0]);
            p.x = std::stod(fields[1]);
            p.y = std::stod(fields[2]);
            sw = std::stod(fields[3]);
            sh = std::stod(fields[4]);
        } catch (const std::exception&) {
            throw DataError("gaze csv '" + path + "' line " + std::to_string(line_no) +
                            ": malformed number");
        }
        std::optional<Confidence> label;
        if (fields[6] == "confident") label = Confidence::Confident;
        else if (fields[6] == "unconfident") label = Confidence::Unconfident;
        else if (fields[6] != "unlabeled")
            throw DataError("gaze csv '" + path + "' line " + std::to_string(line_no) +
                            ": unknown label '" + fields[6] + "'");
        if (records.empty() || records.back().question_id != fields[5]) {
            for (const auto& r : records)
                if (r.question_id == fields[5])
                    throw DataError("gaze csv '" + path + "': question '" + fields[5] +
                                    "' appears in non-contiguous blocks");
            GazeRecord rec;
            rec.question_id = fields[5];
            rec.screen_w = sw;
            rec.screen_h = sh;
            rec.label = label;
            records.push_back(std::move(rec));
        } else {
            GazeRecord& rec = records.back();
            if (rec.screen_w != sw || rec.screen_h != sh)
                throw DataError("gaze csv '" + path + "': screen extent changes within question '" +
                                fields[5] + "'");
            if (rec.label != label)
                throw DataError("gaze csv '" + path + "': label changes within question '" +
                                fields[5] + "'");
        }
        records.back().points.push_back(p);
    }
    if (records.empty()) throw DataError("gaze csv '" + path + "': no data rows");
    for (const auto& r : records) r.validate();
    return records;
}

inline void write_gaze_csv(const std::string& path, const std::vector<GazeRecord>& records) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open gaze csv '" + path + "' for writing");
    f << "t_ms,x,y,screen_w,screen_h,question_id,label\n";
    char buf[160];
    for (const GazeRecord& rec : records) {
        rec.validate();
        const char* label = !rec.label                                 ? "unlabeled"
                            : *rec.label == Confidence::Confident      ? "confident"
                                                                       : "unconfident";
        for (const GazePoint& p : rec.points) {
            std::snprintf(buf, sizeof buf, "%.1f,%.2f,%.2f,%.0f,%.0f,%s,%s\n", p.t_ms, p.x, p.y,
                          rec.screen_w, rec.screen_h, rec.question_id.c_str(), label);
            f << buf;
        }
    }
    if (!f) throw DataError("short write to gaze csv '" + path + "'");
}

/// Binary PPM (P6) dump for eyeballing rasters; no compression, no deps.
inline void write_ppm(const std::string& path, const GazeImage& img) {
    if (img.shape() != Shape{3, kImageSize, kImageSize})
        throw ShapeError("write_ppm: expected [3,64,64], got " + shape_str(img.shape()));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write ppm '" + path + "'");
    f << "P6\n" << kImageSize << " " << kImageSize << "\n255\n";
    for (std::size_t r = 0; r < kImageSize; ++r)
        for (std::size_t c = 0; c < kImageSize; ++c)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const float v = std::clamp(img.at(ch, r, c), 0.0f, 1.0f);
                f.put(static_cast<char>(std::lround(v * 255.0f)));
            }
}

} // namespace ssrl
