// Reference implementations used only by the test suite. Everything here is
// written the slow, obvious way (direct loops, double precision, no shared
// code with the library) so it can serve as an independent oracle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace oracle {

// Valid (no padding) cross-correlation, the convention convolutional layers
// actually compute. x: [c_in][l], w: [c_out][c_in][k], out: [c_out][lo].
inline std::vector<std::vector<double>> conv1d(
    const std::vector<std::vector<double>>& x,
    const std::vector<std::vector<std::vector<double>>>& w,
    const std::vector<double>& b, std::size_t stride = 1) {
    const std::size_t cin = x.size(), l = x[0].size();
    const std::size_t cout = w.size(), k = w[0][0].size();
    const std::size_t lo = (l - k) / stride + 1;
    std::vector<std::vector<double>> out(cout, std::vector<double>(lo, 0.0));
    for (std::size_t u = 0; u < cout; ++u)
        for (std::size_t j = 0; j < lo; ++j) {
            double acc = b[u];
            for (std::size_t c = 0; c < cin; ++c)
                for (std::size_t t = 0; t < k; ++t) acc += w[u][c][t] * x[c][j * stride + t];
            out[u][j] = acc;
        }
    return out;
}

// x: [c_in][h][w], w: [c_out][c_in][k][k], out: [c_out][ho][wo].
inline std::vector<std::vector<std::vector<double>>> conv2d(
    const std::vector<std::vector<std::vector<double>>>& x,
    const std::vector<std::vector<std::vector<std::vector<double>>>>& w,
    const std::vector<double>& b, std::size_t stride = 1) {
    const std::size_t cin = x.size(), h = x[0].size(), wd = x[0][0].size();
    const std::size_t cout = w.size(), k = w[0][0].size();
    const std::size_t ho = (h - k) / stride + 1, wo = (wd - k) / stride + 1;
    std::vector out(cout, std::vector(ho, std::vector<double>(wo, 0.0)));
    for (std::size_t u = 0; u < cout; ++u)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = b[u];
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx)
                            acc += w[u][c][dy][dx] * x[c][oy * stride + dy][ox * stride + dx];
                out[u][oy][ox] = acc;
            }
    return out;
}

// Batch-stat normalization of one channel's values: population variance.
inline std::vector<double> batchnorm(const std::vector<double>& values, double gamma, double beta,
                                     double eps) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = gamma * (values[i] - mean) / std::sqrt(var + eps) + beta;
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) sum += (out[i] = std::exp(z[i] - mx));
    for (auto& v : out) v /= sum;
    return out;
}

inline double cross_entropy(const std::vector<double>& probs, int label) {
    return -std::log(probs[static_cast<std::size_t>(label)]);
}

// Central finite difference of a scalar function of one scalar.
inline double fd_derivative(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

} // namespace oracle
