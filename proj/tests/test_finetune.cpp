#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "json.hpp"
#include "pso/finetune.hpp"
#include "pso/text.hpp"
#include "toy.hpp"

using namespace pso;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = NoiseSchedule::linear();
    return s;
}

const TimeGrid& grid() {
    static const TimeGrid g = TimeGrid::even(4, sched());
    return g;
}

std::vector<PairRecord> records(std::size_t n, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<PairRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({static_cast<int>(i % 2), Vec2{2.0, 0.0} + 0.3 * rng.normal2(), Vec2{-2.0, 0.0} + 0.3 * rng.normal2()});
    return out;
}

LabeledPoints targets() {
    LabeledPoints t;
    t.points = {{3.0, 1.0}, {3.2, 1.1}, {2.9, 0.8}};
    t.conditions = {0, 0, 1};
    return t;
}

double entry(const nlohmann::json& b, const std::string& name) { return b.at("entries").at(name).at("value").get<double>(); }

nlohmann::json baseline() { return nlohmann::json::parse(read_file(std::string(PSO_SOURCE_DIR) + "/baseline/baseline.json")); }

} // namespace

TEST(FinetuneOffline, ZeroStepsRecordsReferenceHash) {
    const Denoiser net = toy::net(1);
    FinetuneConfig cfg;
    cfg.steps = 0;
    const auto r = finetune_offline(net, records(4, 2), grid(), cfg);
    EXPECT_EQ(r.net.hash(), net.hash());
    EXPECT_EQ(r.reference_hash, net.hash());
    EXPECT_TRUE(r.metrics.empty());
}

TEST(FinetuneOffline, SameSeedIsIdentical) {
    const Denoiser net = toy::net(3);
    FinetuneConfig cfg;
    cfg.steps = 5;
    cfg.batch = 8;
    cfg.lr = 1e-3;
    cfg.seed = 4;
    const auto pairs = records(16, 5);
    const auto a = finetune_offline(net, pairs, grid(), cfg);
    const auto b = finetune_offline(net, pairs, grid(), cfg);
    EXPECT_EQ(a.net.hash(), b.net.hash());
    EXPECT_NE(a.net.hash(), net.hash());
    ASSERT_EQ(a.metrics.size(), 5u);
    EXPECT_NEAR(a.metrics[0].loss, std::log(2.0), 1e-12);
    EXPECT_EQ(a.reference_hash, net.hash());
}

TEST(FinetuneOffline, DivergenceReportsStep) {
    FinetuneConfig cfg;
    cfg.steps = 5;
    cfg.batch = 4;
    cfg.lr = 1e300;
    try {
        finetune_offline(toy::net(6), records(8, 7), grid(), cfg);
        FAIL() << "expected a training failure";
    } catch (const TrainingFailure& e) {
        EXPECT_GE(e.step(), 1);
    }
}

TEST(FinetuneOffline, RejectsBadInput) {
    FinetuneConfig cfg;
    cfg.steps = 1;
    EXPECT_THROW(finetune_offline(toy::net(8), {}, grid(), cfg), ContractError);
    auto bad = records(2, 9);
    bad[0].condition = 5;
    EXPECT_THROW(finetune_offline(toy::net(8), bad, grid(), cfg), InputDomainError);
}

TEST(FinetuneOnline, ZeroRoundsLeavesStudent) {
    const Denoiser net = toy::net(10);
    OnlineConfig cfg;
    cfg.rounds = 0;
    const std::vector<int> conds{0, 1};
    const auto r = finetune_online(net, conds, RewardModel(RewardKind::mode_distance, {{1, 0}, {0, 1}}), grid(), cfg);
    EXPECT_EQ(r.net.hash(), net.hash());
}

TEST(FinetuneOnline, ConstantRewardDiscardsEverything) {
    const Denoiser net = toy::net(11);
    OnlineConfig cfg;
    cfg.rounds = 3;
    cfg.pairs_per_round = 8;
    const std::vector<int> conds{0, 1};
    const auto r = finetune_online(net, conds, RewardModel::constant(2), grid(), cfg);
    EXPECT_EQ(r.net.hash(), net.hash());
    EXPECT_EQ(r.warnings.size(), 3u);
    EXPECT_TRUE(r.metrics.empty());
}

TEST(FinetuneOnline, SameSeedIsIdentical) {
    const Denoiser net = toy::net(12);
    OnlineConfig cfg;
    cfg.rounds = 2;
    cfg.pairs_per_round = 8;
    cfg.batch = 4;
    cfg.lr = 1e-3;
    cfg.seed = 13;
    const std::vector<int> conds{0, 1};
    const RewardModel rm(RewardKind::mode_distance, {{2, 0}, {0, 2}});
    const auto a = finetune_online(net, conds, rm, grid(), cfg);
    const auto b = finetune_online(net, conds, rm, grid(), cfg);
    EXPECT_EQ(a.net.hash(), b.net.hash());
    EXPECT_NE(a.net.hash(), net.hash());
    EXPECT_EQ(a.metrics.size(), 4u);
}

TEST(FinetuneFull, ZeroStepsLeavesStudent) {
    const Denoiser net = toy::net(14);
    FinetuneConfig cfg;
    cfg.steps = 0;
    const auto r = finetune_full(net, targets(), grid(), cfg);
    EXPECT_EQ(r.net.hash(), net.hash());
    EXPECT_EQ(r.reference_hash, net.hash());
}

TEST(FinetuneFull, SameSeedIsIdentical) {
    const Denoiser net = toy::net(15);
    FinetuneConfig cfg;
    cfg.steps = 4;
    cfg.batch = 6;
    cfg.lr = 1e-3;
    cfg.pso = PSOConfig::full_default();
    const auto a = finetune_full(net, targets(), grid(), cfg);
    const auto b = finetune_full(net, targets(), grid(), cfg);
    EXPECT_EQ(a.net.hash(), b.net.hash());
    EXPECT_NE(a.net.hash(), net.hash());
}

TEST(NaiveFinetune, ZeroStepsAndDeterminism) {
    const Denoiser net = toy::net(16);
    FinetuneConfig cfg;
    cfg.steps = 0;
    EXPECT_EQ(naive_finetune(net, targets(), sched(), cfg).net.hash(), net.hash());
    cfg.steps = 4;
    cfg.batch = 8;
    cfg.lr = 1e-3;
    const auto a = naive_finetune(net, targets(), sched(), cfg);
    const auto b = naive_finetune(net, targets(), sched(), cfg);
    EXPECT_EQ(a.net.hash(), b.net.hash());
    EXPECT_NE(a.net.hash(), net.hash());
}

TEST(PsoDefaults, BetaPerObjective) {
    EXPECT_EQ(PSOConfig::offline_default().beta, 50.0);
    EXPECT_EQ(PSOConfig::online_default().beta, 5.0);
    EXPECT_EQ(PSOConfig::full_default().beta, 5.0);
    EXPECT_EQ(PSOConfig::omega, 1.0);
}

// Properties of the recorded calibration run.

TEST(Calibrated, OfflineImprovesPreferenceReward) {
    const auto b = baseline();
    EXPECT_GT(entry(b, "preference.offline_reward"), entry(b, "preference.pre_reward"));
}

TEST(Calibrated, OnlineMatchesOrBeatsOffline) {
    const auto b = baseline();
    EXPECT_GE(entry(b, "preference.online_reward"), entry(b, "preference.offline_reward"));
}

TEST(Calibrated, NaiveTuningDegradesMoreThanPso) {
    const auto b = baseline();
    EXPECT_GT(entry(b, "shift.naive_energy_distance"), entry(b, "shift.pso_energy_distance"));
    EXPECT_GT(entry(b, "shift.naive_energy_distance"), entry(b, "shift.pre_energy_distance"));
}

TEST(Calibrated, SelfTargetsLeaveStudentInPlace) {
    EXPECT_LT(entry(baseline(), "self.energy_distance_to_pre"), 0.05);
}

TEST(Calibrated, ConceptTargetsAttractHalfTheSamples) {
    EXPECT_GE(entry(baseline(), "concept.post_fraction"), 0.5);
}
