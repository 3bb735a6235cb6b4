#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "restopo/dynamics.hpp"
#include "restopo/oracles.hpp"

using namespace restopo;
using testutil::make_state;

namespace {

TrainState scalar_state(double w0, double x, double y) {
    TrainState s;
    s.weights.layers = {Matrix{{w0}}};
    s.layout = Topology::plain(1);
    s.x = Matrix{{x}};
    s.y = Matrix{{y}};
    return s;
}

Trajectory synthetic(double t_end, std::size_t samples, double (*f)(double)) {
    Trajectory tr;
    for (std::size_t i = 0; i < samples; ++i) {
        const double t = t_end * static_cast<double>(i) / static_cast<double>(samples - 1);
        tr.times.push_back(t);
        tr.iters.push_back(static_cast<long>(i));
        tr.losses.push_back(f(t));
    }
    return tr;
}

}  // namespace

TEST_CASE("scalar gradient step by hand") {
    TrainState s = scalar_state(0.0, 1.0, 1.0);
    CHECK(gd_step(s, 0.5) == StepStatus::ok);
    CHECK(s.weights[0](0, 0) == 0.5);
}

TEST_CASE("zero gradient leaves the state unchanged") {
    TrainState s = make_state(3, 3, 6, Topology::single(3, 0, 2), 4);
    s.y = forward(s).output;
    const TrainState before = s;
    CHECK(gd_step(s, 0.1) == StepStatus::ok);
    for (int k = 0; k < 3; ++k) CHECK(s.weights[k] == before.weights[k]);
}

TEST_CASE("a small step decreases the loss") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Layout layout = seed % 2 ? Layout{Topology::single(3, 0, 1)} : Layout{AncreParams::uniform(3)};
        TrainState s = make_state(3, 4, 8, layout, seed);
        const double before = evaluate_loss(s);
        gd_step(s, 1e-4);
        CHECK(evaluate_loss(s) < before);
    }
}

TEST_CASE("non-finite step freezes the state") {
    TrainState s = make_state(3, 2, 4, Topology::plain(3), 2);
    for (auto& w : s.weights.layers) w *= 1e120;
    const TrainState before = s;
    CHECK(gd_step(s, 1.0) == StepStatus::non_finite);
    for (int k = 0; k < 3; ++k) CHECK(s.weights[k] == before.weights[k]);
}

TEST_CASE("divergent training is flagged") {
    TrainState s = make_state(3, 4, 8, Topology::cascaded(3), 3);
    GdOptions o;
    o.lr = 50.0;
    o.iters = 200;
    const Trajectory tr = train_gd(s, o);
    CHECK(tr.diverged);
    CHECK(tr.stop_reason == "diverged");
    CHECK(classify_rate(tr).kind == RateKind::diverged);
}

TEST_CASE("loss floor stops early") {
    TrainState s = make_state(2, 2, 4, Topology::single(2, 0, 2), 3);
    s.y = matmul(Matrix{{0.5, 0.1}, {0.2, 0.3}}, s.x);
    GdOptions o;
    o.lr = 0.2;
    o.iters = 100000;
    o.loss_floor = 1e-10;
    const Trajectory tr = train_gd(s, o);
    CHECK(tr.stop_reason == "loss_floor");
    CHECK(tr.losses.back() <= 1e-10);
    CHECK(tr.iters.back() < 100000);
}

TEST_CASE("record schedule") {
    TrainState s = make_state(2, 2, 4, Topology::plain(2), 3);
    GdOptions o;
    o.lr = 1e-3;
    o.iters = 25;
    o.record_every = 10;
    o.dense_steps = 3;
    const Trajectory tr = train_gd(s, o);
    CHECK(tr.iters == std::vector<long>{0, 1, 2, 10, 20, 25});
    tr.validate();
    for (std::size_t i = 0; i < tr.size(); ++i) CHECK(tr.times[i] == doctest::Approx(1e-3 * tr.iters[i]));
}

TEST_CASE("empty integration") {
    TrainState s = make_state(3, 3, 6, Topology::single(3, 0, 2), 1);
    const double l0 = evaluate_loss(s);
    for (auto m : {GfMethod::euler, GfMethod::rk4}) {
        TrainState c = s;
        GfOptions o;
        o.t_end = 0.0;
        o.method = m;
        const Trajectory tr = integrate_gf(c, o);
        REQUIRE(tr.size() == 1);
        CHECK(tr.losses[0] == l0);
        CHECK(classify_rate(tr).kind == RateKind::stalled);
    }
}

TEST_CASE("gradient flow on a scalar problem follows the exponential solution") {
    const double w0 = 0.2, sigma = 0.9;
    auto exact = [&](double t) { return sigma + (w0 - sigma) * std::exp(-t); };

    TrainState s = scalar_state(w0, 1.0, sigma);
    GfOptions o;
    o.dt = 1e-3;
    o.t_end = 2.0;
    o.method = GfMethod::rk4;
    integrate_gf(s, o);
    CHECK(std::abs(s.weights[0](0, 0) - exact(2.0)) <= 1e-10);

    // Euler is first order: halving dt halves the error.
    std::vector<double> err;
    for (double dt : {2e-3, 1e-3, 5e-4}) {
        TrainState e = scalar_state(w0, 1.0, sigma);
        GfOptions oe;
        oe.dt = dt;
        oe.t_end = 2.0;
        integrate_gf(e, oe);
        err.push_back(std::abs(e.weights[0](0, 0) - exact(2.0)));
    }
    CHECK(err[0] / err[1] == doctest::Approx(2.0).epsilon(0.02));
    CHECK(err[1] / err[2] == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("euler flow and gradient descent coincide") {
    TrainState a = make_state(3, 3, 6, AncreParams::uniform(3), 6);
    TrainState b = a;
    GfOptions g;
    g.dt = 1e-2;
    g.t_end = 1.0;
    GdOptions d;
    d.lr = 1e-2;
    d.iters = 100;
    CHECK(trajectory_csv(integrate_gf(a, g)) == trajectory_csv(train_gd(b, d)));
}

TEST_CASE("full-matrix rk4 flow matches the diagonal oracle") {
    const LbWitness wit = lb_witness_init(4, 3, 5);
    TrainState s = wit.state;
    std::vector<std::vector<double>> w1;
    GfOptions o;
    o.dt = 1e-3;
    o.t_end = 5.0;
    o.method = GfMethod::rk4;
    o.record_every = 10;
    o.observer = [&](const TrainState& st, double) {
        std::vector<double> row;
        for (std::size_t i = 0; i < 4; ++i) row.push_back(st.weights[0](i, i) + 1.0);
        w1.push_back(row);
    };
    integrate_gf(s, o);
    const DiagTrajectory ref = diag_integrate(wit.diag, 1e-3, 5.0, 10);
    REQUIRE(w1.size() == ref.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k)
        for (std::size_t i = 0; i < 4; ++i)
            worst = std::max(worst, std::abs(w1[k][i] - ref.w[i][k]) / std::max(std::abs(ref.w[i][k]), 1e-12));
    CHECK(worst <= 1e-6);
}

TEST_CASE("loss is non-increasing along small-step flow") {
    const UbWitness wit = ub_witness_init(4, 0.5, 3);
    TrainState s = wit.state;
    GfOptions o;
    o.dt = 1e-3;
    o.t_end = 5.0;
    const Trajectory tr = integrate_gf(s, o);
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.losses[i] <= tr.losses[i - 1] * (1.0 + 1e-12));
}

TEST_CASE("classify synthetic curves") {
    const Trajectory ex = synthetic(10.0, 1001, [](double t) { return std::exp(-2.0 * t); });
    const RateVerdict v = classify_rate(ex);
    CHECK(v.kind == RateKind::linear);
    CHECK(std::abs(v.rate_or_power - 2.0) <= 1e-6);

    const Trajectory pw = synthetic(1000.0, 1001, [](double t) { return 1.0 / ((1.0 + t) * (1.0 + t)); });
    const RateVerdict p = classify_rate(pw);
    CHECK(p.kind == RateKind::sublinear);
    CHECK(std::abs(p.rate_or_power - 2.0) <= 0.05);

    const Trajectory flat = synthetic(10.0, 100, [](double) { return 0.3; });
    CHECK(classify_rate(flat).kind == RateKind::stalled);

    const Trajectory short_tr = synthetic(10.0, 35, [](double t) { return std::exp(-t); });
    CHECK_THROWS_AS(classify_rate(short_tr), std::invalid_argument);
    CHECK_THROWS_AS(classify_rate(ex, 0.0), std::invalid_argument);
}

TEST_CASE("exact zeros are clamped and noted") {
    Trajectory tr = synthetic(10.0, 200, [](double t) { return std::exp(-3.0 * t); });
    tr.losses.back() = 0.0;
    CHECK(classify_rate(tr).zero_clamped);
}

TEST_CASE("balance drift") {
    Trajectory tr = synthetic(1.0, 5, [](double) { return 1.0; });
    CHECK_THROWS_AS(balance_drift(tr), std::invalid_argument);
    tr.balance_gap.assign(5, 0.25);
    CHECK(balance_drift(tr) == 0.0);
    tr.balance_gap[3] = 0.5;
    CHECK(balance_drift(tr) == 0.25);
}

TEST_CASE("balance drift halves with the euler step") {
    const UbWitness wit = ub_witness_init(4, 0.5, 1);
    std::vector<double> drift;
    for (double dt : {2e-3, 1e-3}) {
        TrainState s = wit.state;
        GfOptions o;
        o.dt = dt;
        o.t_end = 20.0;
        o.channels.balance_gap = true;
        drift.push_back(balance_drift(integrate_gf(s, o)));
    }
    const double ratio = drift[0] / drift[1];
    CHECK(ratio >= 1.6);
    CHECK(ratio <= 2.4);
}

TEST_CASE("runs are bitwise deterministic") {
    auto once = [] {
        TrainState s = make_state(3, 4, 8, AncreParams::uniform(3), 9);
        GdOptions o;
        o.lr = 0.05;
        o.iters = 300;
        o.channels = {true, true, true};
        const Trajectory tr = train_gd(s, o);
        return trajectory_csv(tr) + coefficients_csv(tr);
    };
    CHECK(once() == once());
}

TEST_CASE("trajectory csv layout") {
    TrainState s = make_state(3, 2, 4, Topology::single(3, 0, 2), 1);
    GdOptions o;
    o.lr = 1e-2;
    o.iters = 3;
    o.record_every = 1;
    o.channels.spectral_w1w2 = true;
    o.channels.balance_gap = true;
    Trajectory tr = train_gd(s, o);
    tr.add_column("env", std::vector<double>(tr.size(), 0.5));
    const std::string csv = trajectory_csv(tr);
    CHECK(csv.rfind("t,iter,loss,fro_w1,fro_w2,fro_w3,spec_w1w2,balance_gap,env\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK_THROWS(tr.add_column("short", {1.0}));
}

TEST_CASE("number formatting") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(format_number(1.0 / 3.0) == "0.333333333333");
}
