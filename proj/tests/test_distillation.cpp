#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "pso/dataset.hpp"
#include "pso/distill.hpp"
#include "pso/sampler.hpp"
#include "pso/text.hpp"
#include "toy.hpp"

using namespace pso;

namespace {

// Epsilon model whose implied clean point is exactly zero at every t.
struct ZeroX0 {
    const NoiseSchedule* sched;
    Matrix forward(const Matrix& x, std::span<const int> t, std::span<const int>) const {
        Matrix e(2, x.cols());
        for (std::size_t b = 0; b < x.cols(); ++b)
            e.set_column2(b, (1.0 / std::sqrt(1.0 - sched->alpha_bar(t[b]))) * x.column2(b));
        return e;
    }
};

// First two betas are zero, so alpha_bar = 1 at t = 0 and t = 1.
NoiseSchedule clean_head_schedule() { return NoiseSchedule(std::vector<double>{0.0, 0.0, 0.2, 0.3, 0.4}); }

// Exact noise prediction for data concentrated on the single point x0.
struct SinglePointEps {
    Vec2 x0;
    const NoiseSchedule* sched;
    Matrix forward(const Matrix& x, std::span<const int> t, std::span<const int>) const {
        Matrix e(2, x.cols());
        for (std::size_t b = 0; b < x.cols(); ++b) {
            const double ab = sched->alpha_bar(t[b]);
            e.set_column2(b, (1.0 / std::sqrt(1.0 - ab)) * (x.column2(b) - std::sqrt(ab) * x0));
        }
        return e;
    }
};

double variance(const std::vector<double>& v) {
    double m = 0.0, q = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return q / static_cast<double>(v.size());
}

} // namespace

TEST(TimeGrid, EvenGridInvariants) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    EXPECT_EQ(g.timesteps(), (std::vector<int>{0, 250, 500, 749, 999}));
    EXPECT_EQ(g.describe(), "999,749,500,250,0");
    for (int n = 2; n <= 4; ++n) {
        EXPECT_GT(g.sigma2(n), 0.0);
        EXPECT_LE(g.sigma2(n), 1.0);
        EXPECT_DOUBLE_EQ(g.sigma2(n), 1.0 - s.alpha_bar(g.t(n - 1)));
    }
    EXPECT_TRUE(TimeGrid::deterministic(1));
    EXPECT_FALSE(TimeGrid::deterministic(2));
    EXPECT_THROW(g.sigma2(1), ContractError);
    EXPECT_THROW(TimeGrid({0, 5, 5}, s), InputDomainError);
    EXPECT_THROW(TimeGrid({1, 5}, s), InputDomainError);
}

TEST(MdpStep, FinalTransitionIsRejected) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    SeededRng rng(1);
    EXPECT_THROW(mdp_step(toy::net(1), {0, 0}, 1, 0, rng, g), ContractError);
    EXPECT_THROW(mdp_step(toy::net(1), {0, 0}, 5, 0, rng, g), InputDomainError);
}

TEST(MdpStep, CleanPreviousLevelReturnsPrediction) {
    const auto s = clean_head_schedule();
    const TimeGrid g({0, 1, 3}, s);
    const Denoiser net = toy::net(2);
    Matrix x(2, 1);
    x.set_column2(0, {0.7, -0.4});
    SeededRng rng(3);
    const auto r = mdp_step(net, x.column2(0), 2, 1, rng, g);
    const int c[1] = {1};
    const Vec2 f = predict_x0(net, x, 2, c, g).column2(0);
    EXPECT_EQ(r.scale, 0.0);
    EXPECT_EQ(r.next.x, f.x);
    EXPECT_EQ(r.next.y, f.y);
}

TEST(MdpStep, RecordedTripleReproducesNextState) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const Denoiser net = toy::net(4);
    SeededRng rng(5);
    for (int n = 4; n >= 2; --n) {
        const auto r = mdp_step(net, {0.2 * n, -0.1}, n, 0, rng, g);
        EXPECT_EQ(r.scale, std::sqrt(g.sigma2(n)));
        const Vec2 back = r.mean + r.scale * r.noise;
        EXPECT_EQ(back.x, r.next.x);
        EXPECT_EQ(back.y, r.next.y);
    }
}

TEST(MdpStep, ZeroPredictorVarianceMatchesSchedule) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const ZeroX0 model{&s};
    for (int n = 2; n <= 4; ++n) {
        SeededRng rng(60 + n);
        std::vector<double> xs, ys;
        for (int i = 0; i < 100000; ++i) {
            const auto r = mdp_step(model, {1.0, -1.0}, n, 0, rng, g);
            xs.push_back(r.next.x);
            ys.push_back(r.next.y);
        }
        const double want = 1.0 - g.alpha_bar(n - 1);
        EXPECT_NEAR(variance(xs) / want, 1.0, 0.02) << "n = " << n;
        EXPECT_NEAR(variance(ys) / want, 1.0, 0.02) << "n = " << n;
    }
}

TEST(MdpFinalStep, DeterministicAndDrawsNothing) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const Denoiser net = toy::net(6);
    const Vec2 a = mdp_final_step(net, {0.5, 0.5}, 1, g);
    const Vec2 b = mdp_final_step(net, {0.5, 0.5}, 1, g);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.y, b.y);

    // A full path draws x_T plus one noise per stochastic step and nothing more.
    SeededRng rng(7);
    sample_trajectory(net, 0, rng, g);
    EXPECT_EQ(rng.draws(), 2u * 4u);
}

TEST(MdpFinalStep, ZeroNetworkDividesByRootAlphaBar) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const Denoiser net(toy::arch());
    const Vec2 r = mdp_final_step(net, {1.0, -2.0}, 0, g);
    EXPECT_NEAR(r.x, 1.0 / std::sqrt(g.alpha_bar(1)), 1e-15);
    EXPECT_NEAR(r.y, -2.0 / std::sqrt(g.alpha_bar(1)), 1e-15);
}

TEST(MdpFinalStep, SinglePointStudentRecoversPoint) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const SinglePointEps net{{1.5, -0.5}, &s};
    SeededRng rng(8);
    for (int i = 0; i < 32; ++i) {
        const Vec2 x = forward_reparam(net.x0, g.alpha_bar(1), rng.normal2());
        const Vec2 r = mdp_final_step(net, x, 0, g);
        EXPECT_NEAR(r.x, net.x0.x, 1e-12);
        EXPECT_NEAR(r.y, net.x0.y, 1e-12);
    }
}

TEST(SampleTrajectory, OneStepGridIsSingleConversion) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(1, s);
    const Denoiser net = toy::net(9);
    SeededRng a(10), b(10);
    const auto tr = sample_trajectory(net, 1, a, g);
    const Vec2 xT = b.normal2();
    const Vec2 f = x0_from_eps(xT, 999, net.forward(xT, 999, 1), s);
    ASSERT_EQ(tr.states.size(), 2u);
    EXPECT_EQ(tr.states[1].x, xT.x);
    EXPECT_EQ(tr.states[0].x, f.x);
    EXPECT_EQ(tr.states[0].y, f.y);
}

TEST(SampleTrajectory, ReplayReconstructsEveryState) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const Denoiser net = toy::net(11);
    SeededRng rng(12);
    const auto tr = sample_trajectory(net, 0, rng, g);
    EXPECT_EQ(tr.provenance, Provenance::generated);
    const auto means = replay_means(net, tr, g);
    for (int n = 4; n >= 2; --n) {
        const std::size_t i = static_cast<std::size_t>(n);
        const Vec2 back = tr.means[i] + tr.scales[i] * tr.noises[i];
        EXPECT_NEAR(back.x, tr.states[i - 1].x, 1e-12);
        EXPECT_NEAR(back.y, tr.states[i - 1].y, 1e-12);
        EXPECT_NEAR(means[i].x, tr.means[i].x, 1e-12);
    }
    EXPECT_EQ(tr.scales[1], 0.0);
    EXPECT_EQ(tr.states[0].x, tr.means[1].x);
    EXPECT_EQ(tr.states[0].y, mdp_final_step(net, tr.states[1], 0, g).y);
}

TEST(SampleTrajectory, BatchingDoesNotChangeEndpoints) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    const Denoiser net = toy::net(13);
    const std::vector<int> four{0, 1, 0, 1}, two{0, 1};
    const auto a = sample_endpoints(net, std::span<const int>(four), 14, g);
    const auto b = sample_endpoints(net, std::span<const int>(two), 14, g);
    EXPECT_EQ(a[0].x, b[0].x);
    EXPECT_EQ(a[1].y, b[1].y);
}

TEST(ForwardTrajectory, CleanGridTimeKeepsX0) {
    const NoiseSchedule s(std::vector<double>{0.0, 0.0, 0.0, 0.2, 0.3});
    const TimeGrid g({0, 1, 2, 4}, s);
    SeededRng rng(15);
    const auto tr = forward_trajectory({2.0, 3.0}, 0, rng, g);
    EXPECT_EQ(tr.provenance, Provenance::forward_from_data);
    EXPECT_EQ(tr.states[2].x, 2.0);
    EXPECT_EQ(tr.states[2].y, 3.0);
    EXPECT_NE(tr.states[3].x, 2.0);
    EXPECT_TRUE(std::isnan(tr.states[1].x));
}

TEST(ForwardTrajectory, NoisesReconstructStates) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    SeededRng rng(16);
    const Vec2 x0{-1.0, 0.5};
    const auto tr = forward_trajectory(x0, 1, rng, g);
    for (int n = 2; n <= 4; ++n) {
        const std::size_t i = static_cast<std::size_t>(n);
        const Vec2 back = forward_reparam(x0, g.alpha_bar(n), tr.noises[i]);
        EXPECT_NEAR(back.x, tr.states[i].x, 1e-12);
        EXPECT_NEAR(back.y, tr.states[i].y, 1e-12);
    }
}

TEST(ForwardTrajectory, MonteCarloMean) {
    const auto s = NoiseSchedule::linear();
    const auto g = TimeGrid::even(4, s);
    SeededRng rng(17);
    const Vec2 x0{2.0, -1.0};
    double sum[5][2] = {};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const auto tr = forward_trajectory(x0, 0, rng, g);
        for (int n = 2; n <= 4; ++n) {
            sum[n][0] += tr.states[static_cast<std::size_t>(n)].x;
            sum[n][1] += tr.states[static_cast<std::size_t>(n)].y;
        }
    }
    for (int n = 2; n <= 4; ++n) {
        const double a = std::sqrt(g.alpha_bar(n));
        EXPECT_NEAR(sum[n][0] / draws, a * x0.x, 0.01);
        EXPECT_NEAR(sum[n][1] / draws, a * x0.y, 0.01);
    }
}

TEST(DistillStudent, ZeroStepsCopiesTeacher) {
    const auto s = NoiseSchedule::linear();
    const Denoiser teacher = toy::net(18, 4);
    DistillConfig cfg;
    cfg.steps = 0;
    const auto r = distill_student(teacher, SyntheticDataset::circle_mixture(), s, TimeGrid::even(4, s), cfg);
    EXPECT_EQ(r.net.hash(), teacher.hash());
}

TEST(DistillStudent, SameSeedIsBitwiseIdentical) {
    const auto s = NoiseSchedule::linear();
    const Denoiser teacher = toy::net(19, 4);
    DistillConfig cfg;
    cfg.steps = 5;
    cfg.batch = 16;
    cfg.teacher_steps = 10;
    cfg.train_samples_per_condition = 32;
    const auto g = TimeGrid::even(4, s);
    const auto a = distill_student(teacher, SyntheticDataset::circle_mixture(), s, g, cfg);
    const auto b = distill_student(teacher, SyntheticDataset::circle_mixture(), s, g, cfg);
    EXPECT_EQ(a.net.hash(), b.net.hash());
    EXPECT_NE(a.net.hash(), teacher.hash());
}

TEST(DistillStudent, RolloutStepsScaleWithStartTime) {
    EXPECT_EQ(rollout_steps(999, 50, 1000), 50);
    EXPECT_EQ(rollout_steps(500, 50, 1000), 26);
    EXPECT_EQ(rollout_steps(0, 50, 1000), 1);
}

TEST(EulerGrid, SplitPreservesVariance) {
    const auto s = NoiseSchedule::linear();
    const auto e = EulerGrid::from_time_grid(TimeGrid::even(4, s));
    EXPECT_EQ(e.sigma(0), 0.0);
    for (int n = 1; n <= 4; ++n) {
        const double sp = e.sigma(n - 1);
        EXPECT_NEAR(e.up(n) * e.up(n) + e.down(n) * e.down(n), sp * sp, 1e-12);
        EXPECT_LT(e.sigma(n - 1), e.sigma(n));
    }
}

TEST(EulerGrid, NonDescendingLevelsAreRejected) {
    EXPECT_THROW(EulerGrid({0.0, 2.0, 1.0}, {0, 1, 2}), ContractError);
    EXPECT_THROW(EulerGrid({0.0, 1.0, 1.0}, {0, 1, 2}), ContractError);
}

TEST(EulerAncestral, ZeroUpComponentIsPureEulerStep) {
    const auto s = NoiseSchedule::linear();
    const auto e = EulerGrid::from_time_grid(TimeGrid::even(4, s));
    ASSERT_EQ(e.up(1), 0.0);
    const Denoiser net = toy::net(20);
    SeededRng rng(21);
    const Vec2 x{1.0, 2.0};
    const auto r = euler_ancestral_step(net, x, 1, 0, rng, e);
    Matrix xm(2, 1);
    xm.set_column2(0, x);
    const int c[1] = {0};
    const Vec2 f = euler_predict_x0(net, xm, 1, c, e).column2(0);
    EXPECT_NEAR(r.next.x, f.x, 1e-12);
    EXPECT_NEAR(r.next.y, f.y, 1e-12);
    EXPECT_EQ(rng.draws(), 0u);
}

TEST(EulerAncestral, VanishingPreviousLevelApproachesPrediction) {
    const EulerGrid e({1e-9, 0.8, 2.0}, {0, 300, 999});
    const Denoiser net = toy::net(22);
    SeededRng rng(23);
    const Vec2 x{0.3, -0.6};
    const auto r = euler_ancestral_step(net, x, 1, 1, rng, e);
    Matrix xm(2, 1);
    xm.set_column2(0, x);
    const int c[1] = {1};
    const Vec2 f = euler_predict_x0(net, xm, 1, c, e).column2(0);
    EXPECT_NEAR(r.next.x, f.x, 1e-8);
    EXPECT_NEAR(r.next.y, f.y, 1e-8);
}

TEST(Calibrated, StudentStaysWithinTwiceTeacherDistance) {
    const auto b = nlohmann::json::parse(read_file(std::string(PSO_SOURCE_DIR) + "/baseline/baseline.json"));
    auto entry = [&](const char* k) { return b.at("entries").at(k).at("value").get<double>(); };
    EXPECT_LT(entry("student.energy_distance_to_teacher"), 2.0 * entry("teacher.energy_distance"));
}
