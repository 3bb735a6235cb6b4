#include "restopo/ancre.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace restopo {

std::string to_string(Normalization mode) {
    return mode == Normalization::ingoing ? "ingoing" : "outgoing";
}

Normalization parse_normalization(std::string_view text) {
    if (text == "ingoing" || text == "in") return Normalization::ingoing;
    if (text == "outgoing" || text == "out") return Normalization::outgoing;
    throw std::invalid_argument("unknown normalization mode '" + std::string(text) + "'");
}

CoeffMap::CoeffMap(int depth, double fill) : depth_(depth) {
    if (depth < 1) throw std::invalid_argument("CoeffMap: depth must be >= 1");
    values_.assign(static_cast<std::size_t>(depth + 1) * (depth + 1), fill);
}

std::size_t CoeffMap::index(int i, int j) const {
    if (i < 0 || i >= j || j > depth_)
        throw std::out_of_range("CoeffMap: pair " + std::to_string(i) + ":" + std::to_string(j) +
                                " outside 0 <= i < j <= " + std::to_string(depth_));
    return static_cast<std::size_t>(i) * (depth_ + 1) + j;
}

double& CoeffMap::at(int i, int j) { return values_[index(i, j)]; }
double CoeffMap::at(int i, int j) const { return values_[index(i, j)]; }

std::vector<std::pair<int, int>> CoeffMap::pairs() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(pair_count());
    for (int j = 1; j <= depth_; ++j)
        for (int i = 0; i < j; ++i) out.emplace_back(i, j);
    return out;
}

std::vector<double> CoeffMap::flatten() const {
    std::vector<double> out;
    out.reserve(pair_count());
    for (auto [i, j] : pairs()) out.push_back(at(i, j));
    return out;
}

void CoeffMap::assign(std::span<const double> values) {
    if (values.size() != pair_count())
        throw std::invalid_argument("CoeffMap::assign: expected " + std::to_string(pair_count()) +
                                    " values, got " + std::to_string(values.size()));
    std::size_t k = 0;
    for (auto [i, j] : pairs()) at(i, j) = values[k++];
}

AncreParams AncreParams::uniform(int depth, Normalization mode, double temperature, bool trunk) {
    AncreParams p;
    p.depth = depth;
    p.raw = CoeffMap(depth);
    p.mode = mode;
    p.temperature = temperature;
    p.trunk = trunk;
    p.validate();
    return p;
}

void AncreParams::validate() const {
    if (depth < 1) throw std::invalid_argument("AncreParams: depth must be >= 1");
    if (raw.depth() != depth)
        throw std::invalid_argument("AncreParams: coefficient map depth " + std::to_string(raw.depth()) +
                                    " != " + std::to_string(depth));
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw std::invalid_argument("AncreParams: temperature must be positive and finite");
}

std::vector<std::vector<std::pair<int, int>>> normalization_groups(int depth, Normalization mode) {
    std::vector<std::vector<std::pair<int, int>>> groups;
    if (mode == Normalization::ingoing) {
        for (int j = 1; j <= depth; ++j) {
            auto& g = groups.emplace_back();
            for (int i = 0; i < j; ++i) g.emplace_back(i, j);
        }
    } else {
        for (int i = 0; i < depth; ++i) {
            auto& g = groups.emplace_back();
            for (int j = i + 1; j <= depth; ++j) g.emplace_back(i, j);
        }
    }
    return groups;
}

CoeffMap normalize(const AncreParams& params) {
    params.validate();
    CoeffMap p(params.depth);
    for (const auto& group : normalization_groups(params.depth, params.mode)) {
        double top = -INFINITY;
        for (auto [i, j] : group) top = std::max(top, params.raw.at(i, j) / params.temperature);
        double sum = 0.0;
        for (auto [i, j] : group) {
            const double e = std::exp(params.raw.at(i, j) / params.temperature - top);
            p.at(i, j) = e;
            sum += e;
        }
        for (auto [i, j] : group) p.at(i, j) /= sum;
    }
    return p;
}

CoeffMap softmax_backward(const AncreParams& params, const CoeffMap& p, const CoeffMap& grad_p) {
    CoeffMap grad_c(params.depth);
    for (const auto& group : normalization_groups(params.depth, params.mode)) {
        double mean = 0.0;
        for (auto [i, j] : group) mean += p.at(i, j) * grad_p.at(i, j);
        for (auto [i, j] : group)
            grad_c.at(i, j) = p.at(i, j) * (grad_p.at(i, j) - mean) / params.temperature;
    }
    return grad_c;
}

Matrix heatmap(const AncreParams& params) {
    if (params.mode != Normalization::ingoing)
        throw std::invalid_argument("heatmap: defined for ingoing normalization only");
    const CoeffMap p = normalize(params);
    const int K = params.depth;
    Matrix map(K + 1, K + 1);
    for (double& v : map.data()) v = kHeatmapSentinel;
    for (int j = 1; j <= K; ++j) {
        double top = 0.0;
        for (int i = 0; i < j; ++i) top = std::max(top, p.at(i, j));
        for (int i = 0; i < j; ++i) {
            const double ratio = p.at(i, j) / top;
            // Underflowed probabilities fall back to the sentinel.
            map(j, i) = ratio > 0.0 ? std::max(std::log10(ratio), kHeatmapSentinel) : kHeatmapSentinel;
        }
    }
    return map;
}

std::string heatmap_csv(const Matrix& map) {
    std::string out = "j\\i";
    for (std::size_t i = 0; i < map.cols(); ++i) out += "," + std::to_string(i);
    out += '\n';
    char buf[64];
    for (std::size_t j = 0; j < map.rows(); ++j) {
        out += std::to_string(j);
        for (std::size_t i = 0; i < map.cols(); ++i) {
            double v = map(j, i);
            if (v == 0.0) v = 0.0;  // no "-0"
            std::snprintf(buf, sizeof buf, ",%.6g", v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

std::vector<std::pair<int, int>> group_argmax(const AncreParams& params, const CoeffMap& values) {
    std::vector<std::pair<int, int>> out;
    for (const auto& group : normalization_groups(params.depth, params.mode)) {
        auto best = group.front();
        for (auto pr : group)
            if (values.at(pr.first, pr.second) > values.at(best.first, best.second)) best = pr;
        out.push_back(best);
    }
    return out;
}

std::vector<double> group_entropy(const AncreParams& params, const CoeffMap& p) {
    std::vector<double> out;
    for (const auto& group : normalization_groups(params.depth, params.mode)) {
        double h = 0.0;
        for (auto [i, j] : group) {
            const double q = p.at(i, j);
            if (q > 0.0) h -= q * std::log(q);
        }
        out.push_back(h);
    }
    return out;
}

}  // namespace restopo
