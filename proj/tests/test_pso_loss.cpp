#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pso/pso_loss.hpp"
#include "pso/reward.hpp"
#include "toy.hpp"

using namespace pso;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = NoiseSchedule::linear();
    return s;
}

PairBatch make_pair(PairingMode mode, const Denoiser& gen, const TimeGrid& g, SeededRng& rng) {
    PairBatch p;
    p.condition = static_cast<int>(rng.uniform_index(2));
    p.mode = mode;
    auto forward = [&] { return forward_trajectory(2.0 * rng.normal2(), p.condition, rng, g); };
    auto generated = [&] { return sample_trajectory(gen, p.condition, rng, g); };
    switch (mode) {
    case PairingMode::full:
        p.target = forward();
        p.reference = generated();
        break;
    case PairingMode::offline:
        p.target = forward();
        p.reference = forward();
        break;
    case PairingMode::online:
        p.target = generated();
        p.reference = generated();
        break;
    }
    return p;
}

std::vector<PairBatch> make_pairs(PairingMode mode, const Denoiser& gen, const TimeGrid& g, std::size_t n,
                                  std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<PairBatch> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_pair(mode, gen, g, rng));
    return out;
}

PSOLossResult run(PairingMode mode, const Denoiser& student, const FrozenReference& ref,
                  const std::vector<PairBatch>& pairs, const PSOConfig& cfg, const TimeGrid& g) {
    switch (mode) {
    case PairingMode::full: return pso_loss(student, ref, pairs, cfg, g);
    case PairingMode::offline: return pso_offline_loss(student, ref, pairs, cfg, g);
    case PairingMode::online: return pso_online_loss(student, ref, pairs, cfg, g);
    }
    return {};
}

// Branch terms evaluated with plain forward passes.
double eps_term(const Denoiser& net, const Trajectory& tr, int n, const TimeGrid& g) {
    const std::size_t i = static_cast<std::size_t>(n);
    return (tr.noises[i] - net.forward(tr.states[i], g.t(n), tr.condition)).squared_norm();
}

double mean_term(const Denoiser& net, const Trajectory& tr, int n, const TimeGrid& g) {
    const std::size_t i = static_cast<std::size_t>(n);
    const Vec2 f = x0_from_eps(tr.states[i], g.alpha_bar(n), net.forward(tr.states[i], g.t(n), tr.condition));
    return (tr.states[i - 1] - std::sqrt(g.alpha_bar(n - 1)) * f).squared_norm();
}

double direct_margin(PairingMode mode, const Denoiser& th, const Denoiser& pre, const PairBatch& p, double beta,
                     const TimeGrid& g) {
    double sum = 0.0;
    for (int n = g.N(); n >= 2; --n) {
        const double k = 1.0 / (2.0 * g.sigma2(n));
        const double Et = eps_term(th, p.target, n, g) - eps_term(pre, p.target, n, g);
        switch (mode) {
        case PairingMode::full:
            sum += Et - k * (mean_term(th, p.reference, n, g) - mean_term(pre, p.reference, n, g));
            break;
        case PairingMode::offline:
            sum += Et - (eps_term(th, p.reference, n, g) - eps_term(pre, p.reference, n, g));
            break;
        case PairingMode::online:
            sum += k * ((mean_term(th, p.target, n, g) - mean_term(pre, p.target, n, g)) -
                        (mean_term(th, p.reference, n, g) - mean_term(pre, p.reference, n, g)));
            break;
        }
    }
    return -beta * sum;
}

constexpr PairingMode kModes[] = {PairingMode::full, PairingMode::offline, PairingMode::online};

} // namespace

TEST(PsoLoss, IdentityGivesLn2) {
    const auto g = TimeGrid::even(4, sched());
    for (PairingMode mode : kModes) {
        const Denoiser net = toy::net(1);
        const FrozenReference ref(net);
        const auto pairs = make_pairs(mode, net, g, 8, 2);
        const auto r = run(mode, net, ref, pairs, PSOConfig{5.0}, g);
        EXPECT_NEAR(r.loss, std::log(2.0), 1e-9) << to_string(mode);
        for (double m : r.margins) EXPECT_EQ(m, 0.0);
    }
}

TEST(PsoLoss, ClosedFormSigmoid) {
    const double m = margin_from_sum(50.0, -0.02);
    EXPECT_DOUBLE_EQ(m, 1.0);
    EXPECT_NEAR(neg_log_sigmoid(m), 0.313262, 1e-6);
    EXPECT_NEAR(neg_log_sigmoid(m), std::log1p(std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(neg_log_sigmoid(-800.0), 800.0, 1e-12);
    EXPECT_EQ(neg_log_sigmoid(800.0), 0.0);
}

TEST(PsoLoss, MarginsMatchDirectEvaluation) {
    const auto g = TimeGrid::even(4, sched());
    for (PairingMode mode : kModes) {
        const Denoiser pre = toy::net(3);
        const Denoiser th = toy::perturbed(pre, 0.05, 4);
        const auto pairs = make_pairs(mode, pre, g, 6, 5);
        const auto r = run(mode, th, FrozenReference(pre), pairs, PSOConfig{7.0}, g);
        double loss = 0.0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const double want = direct_margin(mode, th, pre, pairs[i], 7.0, g);
            EXPECT_NEAR(r.margins[i], want, 1e-10 * std::max(1.0, std::abs(want))) << to_string(mode);
            loss += neg_log_sigmoid(want) / static_cast<double>(pairs.size());
        }
        EXPECT_NEAR(r.loss, loss, 1e-12);
    }
}

TEST(PsoLoss, GradientsMatchFiniteDifferences) {
    const auto g = TimeGrid::even(4, sched());
    for (PairingMode mode : kModes)
        for (std::uint64_t s = 0; s < 3; ++s) {
            const Denoiser pre = toy::net(10 + s);
            ASSERT_LE(pre.num_params(), 100u);
            const Denoiser th = toy::perturbed(pre, 0.05, 20 + s);
            const FrozenReference ref(pre);
            const auto pairs = make_pairs(mode, pre, g, 3, 30 + s);
            const PSOConfig cfg{5.0};
            const auto r = run(mode, th, ref, pairs, cfg, g);
            const double err = toy::worst_fd_error(
                th, r.grad.values, [&](const Denoiser& n) { return run(mode, n, ref, pairs, cfg, g).loss; });
            EXPECT_LT(err, 1e-4) << to_string(mode) << " instance " << s;
        }
}

TEST(PsoLoss, SwappingBranchesNegatesMargin) {
    const auto g = TimeGrid::even(4, sched());
    for (PairingMode mode : {PairingMode::offline, PairingMode::online}) {
        const Denoiser pre = toy::net(40);
        const Denoiser th = toy::perturbed(pre, 0.1, 41);
        const FrozenReference ref(pre);
        const auto pairs = make_pairs(mode, pre, g, 20, 42);
        std::vector<PairBatch> swapped;
        for (const auto& p : pairs) swapped.push_back(p.swapped());
        const auto a = run(mode, th, ref, pairs, PSOConfig{50.0}, g);
        const auto b = run(mode, th, ref, swapped, PSOConfig{50.0}, g);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            EXPECT_EQ(a.margins[i], -b.margins[i]);
            const double both = neg_log_sigmoid(a.margins[i]) + neg_log_sigmoid(b.margins[i]);
            EXPECT_GE(both, 2.0 * std::log(2.0) - 1e-15);
            if (a.margins[i] != 0.0) {
                EXPECT_GT(both, 2.0 * std::log(2.0));
            }
        }
    }
}

TEST(PsoLoss, LossDecreasesInMargin) {
    double prev = neg_log_sigmoid(-30.0);
    for (double m = -29.5; m <= 30.0; m += 0.5) {
        const double l = neg_log_sigmoid(m);
        EXPECT_LT(l, prev) << m;
        prev = l;
    }
}

TEST(PsoLoss, CleanEndpointsNeverEnterTheLoss) {
    const auto g = TimeGrid::even(2, sched());
    for (PairingMode mode : kModes) {
        const Denoiser pre = toy::net(50);
        const Denoiser th = toy::perturbed(pre, 0.1, 51);
        const FrozenReference ref(pre);
        auto pairs = make_pairs(mode, pre, g, 4, 52);
        const double before = run(mode, th, ref, pairs, PSOConfig{5.0}, g).loss;
        for (auto& p : pairs) {
            p.target.states[0] = p.target.states[0] + Vec2{3.0, -3.0};
            p.reference.states[0] = p.reference.states[0] + Vec2{-1.0, 2.0};
        }
        EXPECT_EQ(run(mode, th, ref, pairs, PSOConfig{5.0}, g).loss, before) << to_string(mode);
    }
}

TEST(PsoLoss, OneStepGridIsRejected) {
    const auto g1 = TimeGrid::even(1, sched());
    const Denoiser net = toy::net(53);
    const auto pairs = make_pairs(PairingMode::offline, net, g1, 1, 54);
    EXPECT_THROW(pso_offline_loss(net, FrozenReference(net), pairs, PSOConfig{}, g1), ContractError);
}

TEST(PsoLoss, ContractViolations) {
    const auto g = TimeGrid::even(4, sched());
    const Denoiser net = toy::net(55);
    const FrozenReference ref(net);
    auto full = make_pairs(PairingMode::full, net, g, 1, 56);
    EXPECT_THROW(pso_offline_loss(net, ref, full, PSOConfig{}, g), ContractError);
    full[0].mode = PairingMode::offline;
    EXPECT_THROW(pso_offline_loss(net, ref, full, PSOConfig{}, g), ContractError);

    auto online = make_pairs(PairingMode::online, net, g, 1, 57);
    online[0].labeled = false;
    EXPECT_THROW(pso_online_loss(net, ref, online, PSOConfig{}, g), ContractError);

    auto mixed = make_pairs(PairingMode::offline, net, g, 1, 58);
    mixed[0].reference.condition = 1 - mixed[0].condition;
    EXPECT_THROW(pso_offline_loss(net, ref, mixed, PSOConfig{}, g), ContractError);

    EXPECT_THROW(pso_loss(net, ref, std::vector<PairBatch>{}, PSOConfig{}, g), ContractError);
    EXPECT_THROW(PSOConfig{0.0}.validate(), ContractError);
}

TEST(PsoLoss, NonFiniteMarginIsNumericError) {
    const auto g = TimeGrid::even(4, sched());
    const Denoiser pre = toy::net(59);
    const Denoiser th = toy::perturbed(pre, 0.1, 60);
    auto pairs = make_pairs(PairingMode::offline, pre, g, 1, 61);
    for (auto& s : pairs[0].target.states) s = Vec2{1e200, 1e200};
    EXPECT_THROW(pso_offline_loss(th, FrozenReference(pre), pairs, PSOConfig{}, g), NumericError);
}

TEST(LabelPair, HigherRewardBecomesTarget) {
    const RewardModel rm(RewardKind::mode_distance, {{2.0, 0.0}});
    Trajectory a, b;
    a.states = {{2.1, 0.0}, {0, 0}};
    b.states = {{-2.0, 0.0}, {0, 0}};
    const auto p = label_pair(b, a, rm);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->target.endpoint().x, 2.1);
    EXPECT_EQ(p->reference.endpoint().x, -2.0);
    EXPECT_EQ(p->mode, PairingMode::online);
    EXPECT_TRUE(p->labeled);
}

TEST(LabelPair, OneVersusZeroReward) {
    // halfplane reward r(x) = x.x here, so r(a) = 1 and r(b) = 0.
    const RewardModel rm(RewardKind::halfplane, {{1.0, 0.0}});
    Trajectory a, b;
    a.states = {{1.0, 5.0}};
    b.states = {{0.0, -5.0}};
    const auto p = label_pair(a, b, rm);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->target.endpoint().x, 1.0);
}

TEST(LabelPair, TiesAreDiscarded) {
    const RewardModel rm(RewardKind::mode_distance, {{0.0, 0.0}});
    Trajectory a, b;
    a.states = {{1.0, 0.0}};
    b.states = {{0.0, -1.0}};
    EXPECT_FALSE(label_pair(a, b, rm).has_value());
    b.condition = 1;
    EXPECT_THROW(label_pair(a, b, rm), ContractError);
}

TEST(LabelPair, InvariantUnderIncreasingTransform) {
    // Positive-shifted halfplane reward r and its cube (r + 10)^3 must agree on every label.
    const RewardModel rm(RewardKind::halfplane, {{0.6, -0.8}}, {-1.0});
    SeededRng rng(62);
    for (int i = 0; i < 500; ++i) {
        Trajectory a, b;
        a.states = {rng.normal2()};
        b.states = {rng.normal2()};
        const auto p = label_pair(a, b, rm);
        ASSERT_TRUE(p.has_value());
        auto cubed = [&](const Trajectory& t) { return std::pow(rm(t.endpoint(), 0) + 10.0, 3.0); };
        const bool a_wins = cubed(a) > cubed(b);
        EXPECT_EQ(p->target.endpoint().x, (a_wins ? a : b).endpoint().x);
    }
}
