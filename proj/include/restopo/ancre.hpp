#pragma once

// ---------------------------------------------------------------------------
// Learnable shortcut coefficients.
//
// Every pair 0 <= i < j <= K carries a raw coefficient c_ij. A temperature
// softmax turns them into convex weights p_ij, normalised either per
// destination j (ingoing: sum_i p_ij = 1) or per source i (outgoing:
// sum_j p_ij = 1). Layer K has no outgoing candidates, so the outgoing mode
// has K groups and the ingoing mode has K groups; both hold K(K+1)/2 pairs.
// ---------------------------------------------------------------------------

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "restopo/matrix.hpp"

namespace restopo {

enum class Normalization { ingoing, outgoing };

std::string to_string(Normalization mode);
Normalization parse_normalization(std::string_view text);

inline constexpr double kDefaultTemperature = 0.1;
// Stands in for log10(0) in heatmaps and their CSV export.
inline constexpr double kHeatmapSentinel = -99.0;

// Dense storage for a value per pair (i, j), 0 <= i < j <= K.
class CoeffMap {
public:
    CoeffMap() = default;
    explicit CoeffMap(int depth, double fill = 0.0);

    int depth() const { return depth_; }
    std::size_t pair_count() const { return static_cast<std::size_t>(depth_) * (depth_ + 1) / 2; }

    double& at(int i, int j);
    double at(int i, int j) const;

    // Canonical order: destination j ascending, then source i ascending.
    std::vector<std::pair<int, int>> pairs() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> values);

    friend bool operator==(const CoeffMap&, const CoeffMap&) = default;

private:
    std::size_t index(int i, int j) const;
    int depth_ = 0;
    std::vector<double> values_;
};

struct AncreParams {
    int depth = 1;
    CoeffMap raw;  // c_ij
    Normalization mode = Normalization::ingoing;
    double temperature = kDefaultTemperature;
    // Keep the un-weighted W_k h_{k-1} term next to the mixture.
    bool trunk = true;

    // All raw coefficients zero (uniform mixture).
    static AncreParams uniform(int depth, Normalization mode = Normalization::ingoing,
                               double temperature = kDefaultTemperature, bool trunk = true);
    void validate() const;
};

// Normalisation groups: each inner list holds the pairs sharing one softmax.
std::vector<std::vector<std::pair<int, int>>> normalization_groups(int depth, Normalization mode);

CoeffMap normalize(const AncreParams& params);

// Chains dL/dp through the softmax Jacobian (diag(p) - p p^T) / tau per group.
CoeffMap softmax_backward(const AncreParams& params, const CoeffMap& p, const CoeffMap& grad_p);

// (K+1)x(K+1): entry (j, i) = log10(p_ij / max_i' p_i'j) for i < j, else the
// sentinel. Rows are destinations, columns sources. Ingoing mode only.
Matrix heatmap(const AncreParams& params);
// Header "j\i,0,1,...,K"; one row per destination; 6 significant digits.
std::string heatmap_csv(const Matrix& map);

// The pair with the largest raw coefficient in each group (ties -> smaller
// index along the group), in group order.
std::vector<std::pair<int, int>> group_argmax(const AncreParams& params, const CoeffMap& values);
// Shannon entropy (nats) of each group's distribution, in group order.
std::vector<double> group_entropy(const AncreParams& params, const CoeffMap& p);

}  // namespace restopo
