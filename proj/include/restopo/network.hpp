#pragma once

// ---------------------------------------------------------------------------
// Deep linear network with a residual layout.
//
// Hidden recurrence, h_0 = X and for k = 1..K:
//   fixed topology:     h_k = act(W_k h_{k-1} + sum_{(i,k) in shortcuts} h_i)
//   mixing, trunk on:   h_k = act(W_k h_{k-1} + s_k),  s_k = sum_{i<k} p_ik h_i
//   mixing, trunk off:  h_k = act(W_k s_k)
// Output is h_K. Loss is 0.5 * ||h_K - Y||_F^2.
// ---------------------------------------------------------------------------

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "restopo/ancre.hpp"
#include "restopo/matrix.hpp"
#include "restopo/topology.hpp"

namespace restopo {

enum class Nonlinearity { none, tanh };

std::string to_string(Nonlinearity act);
Nonlinearity parse_nonlinearity(std::string_view text);

struct WeightStack {
    std::vector<Matrix> layers;  // W_1 .. W_K, all d x d

    int depth() const { return static_cast<int>(layers.size()); }
    std::size_t dim() const { return layers.empty() ? 0 : layers.front().rows(); }
    Matrix& operator[](int k) { return layers[k]; }
    const Matrix& operator[](int k) const { return layers[k]; }
    void validate() const;

    static WeightStack zeros(int depth, std::size_t d);
};

using Layout = std::variant<Topology, AncreParams>;

int layout_depth(const Layout& layout);
std::string layout_name(const Layout& layout);

struct TrainState {
    WeightStack weights;
    Layout layout;
    Matrix x;  // d x n
    Matrix y;  // d x n
    Nonlinearity act = Nonlinearity::none;

    int depth() const { return weights.depth(); }
    std::size_t dim() const { return x.rows(); }
    bool has_ancre() const { return std::holds_alternative<AncreParams>(layout); }
    AncreParams& ancre() { return std::get<AncreParams>(layout); }
    const AncreParams& ancre() const { return std::get<AncreParams>(layout); }
    void validate() const;
};

struct ForwardTrace {
    std::vector<Matrix> hidden;          // h_0 .. h_K
    std::vector<Matrix> mix_inputs;      // s_1 .. s_K (mixing layouts only)
    std::vector<Matrix> pre_activation;  // z_1 .. z_K (tanh only)
    std::optional<CoeffMap> p;           // normalised coefficients used
};

struct ForwardResult {
    Matrix output;
    ForwardTrace trace;
};

ForwardResult forward(const TrainState& state);

// Effective operator M with forward(X) = M X; linear layouts only.
Matrix end_to_end_map(const WeightStack& weights, const Topology& topology);
Matrix end_to_end_map(const TrainState& state);

double loss(const Matrix& output, const Matrix& y);
// Convenience: forward + loss.
double evaluate_loss(const TrainState& state);

struct Gradients {
    std::vector<Matrix> weights;     // dL/dW_k
    std::optional<CoeffMap> coeffs;  // dL/dc_ij (mixing layouts)
};

Gradients backward(const TrainState& state, const ForwardTrace& trace);

// Flat parameter view: W_1..W_K row-major, then raw coefficients in
// CoeffMap::pairs() order.
std::vector<double> parameter_vector(const TrainState& state);
void set_parameters(TrainState& state, std::span<const double> values);
std::vector<double> gradient_vector(const Gradients& grads);
double gradient_norm_squared(const Gradients& grads);
bool all_finite(const Gradients& grads);

}  // namespace restopo
