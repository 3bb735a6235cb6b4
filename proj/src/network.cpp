#include "restopo/network.hpp"

#include <cmath>
#include <stdexcept>

namespace restopo {

std::string to_string(Nonlinearity act) { return act == Nonlinearity::none ? "none" : "tanh"; }

Nonlinearity parse_nonlinearity(std::string_view text) {
    if (text == "none" || text == "linear") return Nonlinearity::none;
    if (text == "tanh") return Nonlinearity::tanh;
    throw std::invalid_argument("unknown nonlinearity '" + std::string(text) + "'");
}

void WeightStack::validate() const {
    if (layers.empty()) throw std::invalid_argument("WeightStack: no layers");
    const std::size_t d = layers.front().rows();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto& w = layers[k];
        if (w.rows() != d || w.cols() != d)
            throw std::invalid_argument("WeightStack: layer " + std::to_string(k + 1) + " is " +
                                        w.shape_string() + ", expected " + std::to_string(d) + "x" +
                                        std::to_string(d));
        if (!w.all_finite())
            throw std::invalid_argument("WeightStack: layer " + std::to_string(k + 1) + " has non-finite entries");
    }
}

WeightStack WeightStack::zeros(int depth, std::size_t d) {
    WeightStack w;
    w.layers.assign(depth, Matrix(d, d));
    return w;
}

int layout_depth(const Layout& layout) {
    return std::visit(
        [](const auto& l) {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, Topology>)
                return l.depth();
            else
                return l.depth;
        },
        layout);
}

std::string layout_name(const Layout& layout) {
    if (const auto* t = std::get_if<Topology>(&layout)) return t->to_string();
    return "ancre";
}

void TrainState::validate() const {
    weights.validate();
    if (layout_depth(layout) != weights.depth())
        throw std::invalid_argument("TrainState: layout depth " + std::to_string(layout_depth(layout)) +
                                    " != weight depth " + std::to_string(weights.depth()));
    if (has_ancre()) ancre().validate();
    if (x.rows() != weights.dim())
        throw std::invalid_argument("TrainState: X is " + x.shape_string() + " but layers are " +
                                    std::to_string(weights.dim()) + "x" + std::to_string(weights.dim()));
    require_same_shape(x, y, "TrainState X/Y");
}

namespace {

void apply_activation(Matrix& m, Nonlinearity act) {
    if (act == Nonlinearity::tanh)
        for (double& v : m.data()) v = std::tanh(v);
}

}  // namespace

ForwardResult forward(const TrainState& state) {
    state.validate();
    const int K = state.depth();
    ForwardTrace trace;
    trace.hidden.reserve(K + 1);
    trace.hidden.push_back(state.x);

    const Topology* topo = std::get_if<Topology>(&state.layout);
    const AncreParams* mix = std::get_if<AncreParams>(&state.layout);
    if (mix) trace.p = normalize(*mix);

    for (int k = 1; k <= K; ++k) {
        const Matrix& w = state.weights[k - 1];
        Matrix z;
        if (topo) {
            z = matmul(w, trace.hidden[k - 1]);
            for (int i : topo->sources_into(k)) z += trace.hidden[i];
        } else {
            Matrix s(state.x.rows(), state.x.cols());
            for (int i = 0; i < k; ++i) s.add_scaled(trace.hidden[i], trace.p->at(i, k));
            if (mix->trunk) {
                z = matmul(w, trace.hidden[k - 1]);
                z += s;
            } else {
                z = matmul(w, s);
            }
            trace.mix_inputs.push_back(std::move(s));
        }
        if (state.act == Nonlinearity::tanh) trace.pre_activation.push_back(z);
        apply_activation(z, state.act);
        trace.hidden.push_back(std::move(z));
    }
    Matrix out = trace.hidden.back();
    return {std::move(out), std::move(trace)};
}

Matrix end_to_end_map(const WeightStack& weights, const Topology& topology) {
    weights.validate();
    TrainState s;
    s.weights = weights;
    s.layout = topology;
    s.x = Matrix::identity(weights.dim());
    s.y = s.x;
    return forward(s).output;
}

Matrix end_to_end_map(const TrainState& state) {
    if (state.act != Nonlinearity::none)
        throw std::invalid_argument("end_to_end_map: only defined for the linear (none) nonlinearity");
    TrainState s;
    s.weights = state.weights;
    s.layout = state.layout;
    s.x = Matrix::identity(state.weights.dim());
    s.y = s.x;
    return forward(s).output;
}

double loss(const Matrix& output, const Matrix& y) {
    require_same_shape(output, y, "loss");
    double s = 0.0;
    auto o = output.data();
    auto t = y.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double r = o[i] - t[i];
        s += r * r;
    }
    return 0.5 * s;
}

double evaluate_loss(const TrainState& state) { return loss(forward(state).output, state.y); }

Gradients backward(const TrainState& state, const ForwardTrace& trace) {
    const int K = state.depth();
    const std::size_t d = state.x.rows(), n = state.x.cols();
    const bool mixing = state.has_ancre();
    const bool tanh = state.act == Nonlinearity::tanh;

    auto stale = [](const std::string& why) {
        return std::invalid_argument("backward: trace does not match state (" + why + ")");
    };
    if (trace.hidden.size() != static_cast<std::size_t>(K + 1)) throw stale("hidden count");
    for (const auto& h : trace.hidden)
        if (h.rows() != d || h.cols() != n) throw stale("hidden shape " + h.shape_string());
    if (mixing && (trace.mix_inputs.size() != static_cast<std::size_t>(K) || !trace.p ||
                   trace.p->depth() != K))
        throw stale("mixing inputs");
    if (tanh && trace.pre_activation.size() != static_cast<std::size_t>(K)) throw stale("pre-activations");

    // adj[i] accumulates dL/dh_i over every use of h_i.
    std::vector<Matrix> adj(K + 1, Matrix(d, n));
    adj[K] = trace.hidden[K] - state.y;

    Gradients g;
    g.weights.resize(K);
    CoeffMap grad_p;
    if (mixing) grad_p = CoeffMap(K);

    const Topology* topo = std::get_if<Topology>(&state.layout);
    for (int k = K; k >= 1; --k) {
        Matrix dz = std::move(adj[k]);
        if (tanh) {
            const auto h = trace.hidden[k].data();
            auto dd = dz.data();
            for (std::size_t e = 0; e < dd.size(); ++e) dd[e] *= 1.0 - h[e] * h[e];
        }
        const Matrix& w = state.weights[k - 1];
        if (topo) {
            g.weights[k - 1] = matmul_nt(dz, trace.hidden[k - 1]);
            adj[k - 1] += matmul_tn(w, dz);
            for (int i : topo->sources_into(k)) adj[i] += dz;
        } else if (state.ancre().trunk) {
            g.weights[k - 1] = matmul_nt(dz, trace.hidden[k - 1]);
            adj[k - 1] += matmul_tn(w, dz);
            for (int i = 0; i < k; ++i) {
                adj[i].add_scaled(dz, trace.p->at(i, k));
                grad_p.at(i, k) = frobenius_dot(dz, trace.hidden[i]);
            }
        } else {
            g.weights[k - 1] = matmul_nt(dz, trace.mix_inputs[k - 1]);
            const Matrix ds = matmul_tn(w, dz);
            for (int i = 0; i < k; ++i) {
                adj[i].add_scaled(ds, trace.p->at(i, k));
                grad_p.at(i, k) = frobenius_dot(ds, trace.hidden[i]);
            }
        }
    }
    if (mixing) g.coeffs = softmax_backward(state.ancre(), *trace.p, grad_p);
    return g;
}

std::vector<double> parameter_vector(const TrainState& state) {
    std::vector<double> out;
    for (const auto& w : state.weights.layers) out.insert(out.end(), w.data().begin(), w.data().end());
    if (state.has_ancre()) {
        auto c = state.ancre().raw.flatten();
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

void set_parameters(TrainState& state, std::span<const double> values) {
    std::size_t expected = 0;
    for (const auto& w : state.weights.layers) expected += w.size();
    const std::size_t n_coeff = state.has_ancre() ? state.ancre().raw.pair_count() : 0;
    if (values.size() != expected + n_coeff)
        throw std::invalid_argument("set_parameters: expected " + std::to_string(expected + n_coeff) +
                                    " values, got " + std::to_string(values.size()));
    std::size_t off = 0;
    for (auto& w : state.weights.layers) {
        auto dst = w.data();
        std::copy(values.begin() + off, values.begin() + off + dst.size(), dst.begin());
        off += dst.size();
    }
    if (n_coeff) state.ancre().raw.assign(values.subspan(off));
}

std::vector<double> gradient_vector(const Gradients& grads) {
    std::vector<double> out;
    for (const auto& w : grads.weights) out.insert(out.end(), w.data().begin(), w.data().end());
    if (grads.coeffs) {
        auto c = grads.coeffs->flatten();
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

double gradient_norm_squared(const Gradients& grads) {
    double s = 0.0;
    for (const auto& w : grads.weights) s += frobenius_norm_squared(w);
    if (grads.coeffs)
        for (double v : grads.coeffs->flatten()) s += v * v;
    return s;
}

bool all_finite(const Gradients& grads) {
    for (const auto& w : grads.weights)
        if (!w.all_finite()) return false;
    if (grads.coeffs)
        for (double v : grads.coeffs->flatten())
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace restopo
