#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "pso/dataset.hpp"
#include "pso/denoiser.hpp"
#include "pso/diffusion.hpp"
#include "pso/distill.hpp"
#include "pso/error.hpp"
#include "pso/finetune.hpp"
#include "pso/grid.hpp"
#include "pso/reward.hpp"
#include "pso/schedule.hpp"
#include "pso/text.hpp"

namespace pso {

using nlohmann::json;

/// Every key a run config may contain, with its default. A user file is
/// merged over this document; keys absent here are rejected.
inline const json& default_config_json() {
    static const json d = json::parse(R"({
  "seed": 1,
  "output_dir": "runs/default",
  "dataset": {
    "preset": "circle-mixture",
    "conditions": 4,
    "radius": 4.0,
    "std": 0.3,
    "custom": [],
    "train_samples_per_condition": 8192,
    "data_seed": 0
  },
  "schedule": { "T": 1000, "beta_start": 0.0001, "beta_end": 0.02 },
  "grid": { "N": 4, "placement": "even" },
  "model": { "time_freqs": 8, "cond_dim": 8, "hidden": [128, 128, 128] },
  "teacher": { "steps": 5000, "batch": 256, "lr": 0.001, "lr_min": 0.00001 },
  "distill": { "steps": 6000, "batch": 256, "lr": 0.001, "lr_min": 0.00001,
               "teacher_steps": 50, "weighting": "uniform" },
  "reward": { "kind": "mode-distance", "points": "preferred-modes", "scalars": [] },
  "eval": { "samples_per_condition": 1024, "sample_seed": 4242, "data_seed": 777, "teacher_steps": 50 },
  "tasks": {
    "preference": {
      "samples_per_condition": 4096,
      "pair_seed": 11,
      "offline": { "steps": 500, "batch": 64, "lr": 0.00001, "beta": 50 },
      "online": { "rounds": 375, "pairs_per_round": 128, "batch": 32, "lr": 0.000005, "beta": 2 }
    },
    "shift": {
      "radius_delta": 0.1,
      "targets_per_condition": 2048,
      "target_seed": 21,
      "reference_seed": 31337,
      "offline": { "steps": 500, "batch": 64, "lr": 0.0001, "beta": 50 },
      "naive": { "steps": 500, "batch": 64, "lr": 0.0001 }
    },
    "concept": {
      "condition": 0,
      "center": [3.7, 1.53],
      "points": 5,
      "spread": 0.25,
      "point_seed": 5,
      "radius": 1.0,
      "full": { "steps": 1000, "batch": 128, "lr": 0.0003, "beta": 5 }
    },
    "self": {
      "target_seed": 61,
      "full": { "steps": 1000, "batch": 128, "lr": 0.0001, "beta": 5 }
    }
  }
})");
    return d;
}

namespace detail {

inline void check_known_keys(const json& user, const json& schema, const std::string& path) {
    if (!user.is_object()) return;
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!schema.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        const json& s = schema.at(it.key());
        if (s.is_object()) {
            if (!it.value().is_object()) throw ConfigError("config key '" + key + "' must be an object");
            check_known_keys(it.value(), s, key);
        }
    }
}

inline json parse_scalar(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return json(text); // bare strings need no quotes on the command line
    }
}

template <class T>
T get(const json& j, const std::string& path) {
    const json* node = &j;
    for (const auto& part : split(path, '.')) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("config key '" + path + "' missing");
        node = &node->at(part);
    }
    try {
        return node->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + path + "' has the wrong type");
    }
}

} // namespace detail

struct PreferenceTask {
    std::size_t samples_per_condition = 0;
    std::uint64_t pair_seed = 0;
    FinetuneConfig offline;
    OnlineConfig online;
};

struct ShiftTask {
    double radius_delta = 0.0;
    std::size_t targets_per_condition = 0;
    std::uint64_t target_seed = 0;
    std::uint64_t reference_seed = 0;
    FinetuneConfig offline;
    FinetuneConfig naive;
};

struct ConceptTask {
    int condition = 0;
    Vec2 center;
    std::size_t points = 0;
    double spread = 0.0;
    std::uint64_t point_seed = 0;
    double radius = 1.0;
    FinetuneConfig full;
};

struct SelfTask {
    std::uint64_t target_seed = 0;
    FinetuneConfig full;
};

struct EvalConfig {
    std::size_t samples_per_condition = 1024;
    std::uint64_t sample_seed = 0;
    std::uint64_t data_seed = 0;
    int teacher_steps = 50;
};

/// Fully resolved run configuration.
class RunConfig {
public:
    static RunConfig defaults() { return RunConfig(default_config_json()); }

    /// `overrides` are "dotted.key=value" strings applied after the file.
    static RunConfig from_json(const json& user, const std::vector<std::string>& overrides = {}) {
        detail::check_known_keys(user, default_config_json(), "");
        json merged = default_config_json();
        merged.merge_patch(user);
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
            const std::string key = o.substr(0, eq);
            json* node = &merged;
            const auto parts = split(key, '.');
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
                node = &(*node)[parts[i]];
            }
            if (node->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
            *node = detail::parse_scalar(o.substr(eq + 1));
        }
        return RunConfig(std::move(merged));
    }

    static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {}) {
        json user;
        try {
            user = json::parse(read_file(path));
        } catch (const json::exception& e) {
            throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
        } catch (const LoadError& e) {
            throw ConfigError(e.what());
        }
        return from_json(user, overrides);
    }

    const json& raw() const noexcept { return j_; }
    std::string canonical() const { return j_.dump(); }
    std::uint64_t hash() const { return fnv1a(canonical()); }

    std::uint64_t seed() const { return detail::get<std::uint64_t>(j_, "seed"); }
    std::string output_dir() const { return detail::get<std::string>(j_, "output_dir"); }

    NoiseSchedule schedule() const {
        return NoiseSchedule::linear(detail::get<int>(j_, "schedule.T"), detail::get<double>(j_, "schedule.beta_start"),
                                     detail::get<double>(j_, "schedule.beta_end"));
    }

    TimeGrid grid(const NoiseSchedule& sched) const { return grid(sched, detail::get<int>(j_, "grid.N")); }

    TimeGrid grid(const NoiseSchedule& sched, int N) const {
        if (detail::get<std::string>(j_, "grid.placement") != "even")
            throw ConfigError("grid.placement must be 'even'");
        return TimeGrid::even(N, sched);
    }

    SyntheticDataset dataset() const {
        const auto preset = detail::get<std::string>(j_, "dataset.preset");
        if (preset == "circle-mixture")
            return SyntheticDataset::circle_mixture(detail::get<int>(j_, "dataset.conditions"),
                                                    detail::get<double>(j_, "dataset.radius"),
                                                    detail::get<double>(j_, "dataset.std"));
        if (preset != "custom") throw ConfigError("dataset.preset must be 'circle-mixture' or 'custom'");
        std::vector<ConditionSpec> conds;
        for (const auto& c : j_.at("dataset").at("custom")) conds.push_back(condition_from_json(c));
        return SyntheticDataset(std::move(conds));
    }

    Architecture architecture(int num_conditions) const {
        Architecture a;
        a.timesteps = detail::get<int>(j_, "schedule.T");
        a.num_conditions = num_conditions;
        a.time_freqs = detail::get<int>(j_, "model.time_freqs");
        a.cond_dim = detail::get<int>(j_, "model.cond_dim");
        a.hidden = detail::get<std::vector<int>>(j_, "model.hidden");
        return a;
    }

    TeacherConfig teacher(const Architecture& arch) const {
        TeacherConfig t;
        t.arch = arch;
        t.steps = detail::get<long>(j_, "teacher.steps");
        t.batch = detail::get<std::size_t>(j_, "teacher.batch");
        t.lr = detail::get<double>(j_, "teacher.lr");
        t.lr_min = detail::get<double>(j_, "teacher.lr_min");
        t.seed = seed();
        t.train_samples_per_condition = detail::get<std::size_t>(j_, "dataset.train_samples_per_condition");
        t.data_seed = detail::get<std::uint64_t>(j_, "dataset.data_seed");
        return t;
    }

    DistillConfig distill() const {
        DistillConfig d;
        d.steps = detail::get<long>(j_, "distill.steps");
        d.batch = detail::get<std::size_t>(j_, "distill.batch");
        d.lr = detail::get<double>(j_, "distill.lr");
        d.lr_min = detail::get<double>(j_, "distill.lr_min");
        d.teacher_steps = detail::get<int>(j_, "distill.teacher_steps");
        d.weighting = distill_weighting_from_string(detail::get<std::string>(j_, "distill.weighting"));
        d.seed = seed();
        d.train_samples_per_condition = detail::get<std::size_t>(j_, "dataset.train_samples_per_condition");
        d.data_seed = detail::get<std::uint64_t>(j_, "dataset.data_seed");
        return d;
    }

    /// "preferred-modes" takes the first listed mean of every condition.
    RewardModel reward(const SyntheticDataset& data) const {
        const auto kind = reward_kind_from_string(detail::get<std::string>(j_, "reward.kind"));
        const json& pts = j_.at("reward").at("points");
        std::vector<Vec2> points;
        if (pts.is_string()) {
            if (pts.get<std::string>() != "preferred-modes")
                throw ConfigError("reward.points must be 'preferred-modes' or a list of [x, y]");
            for (int c = 0; c < data.num_conditions(); ++c) {
                const auto& spec = data.condition(c);
                points.push_back(spec.kind == GeneratorKind::gaussian_mixture ? spec.means.front() : spec.center);
            }
        } else {
            for (const auto& p : detail::get<std::vector<std::array<double, 2>>>(j_, "reward.points"))
                points.push_back({p[0], p[1]});
        }
        auto scalars = detail::get<std::vector<double>>(j_, "reward.scalars");
        if (static_cast<int>(points.size()) != data.num_conditions())
            throw ConfigError("reward.points needs one entry per condition");
        return RewardModel(kind, std::move(points), std::move(scalars));
    }

    EvalConfig eval() const {
        return {detail::get<std::size_t>(j_, "eval.samples_per_condition"), detail::get<std::uint64_t>(j_, "eval.sample_seed"),
                detail::get<std::uint64_t>(j_, "eval.data_seed"), detail::get<int>(j_, "eval.teacher_steps")};
    }

    PreferenceTask preference() const {
        const std::string p = "tasks.preference.";
        PreferenceTask t;
        t.samples_per_condition = detail::get<std::size_t>(j_, p + "samples_per_condition");
        t.pair_seed = detail::get<std::uint64_t>(j_, p + "pair_seed");
        t.offline = finetune(p + "offline", PSOConfig::offline_default());
        t.online.rounds = detail::get<long>(j_, p + "online.rounds");
        t.online.pairs_per_round = detail::get<std::size_t>(j_, p + "online.pairs_per_round");
        t.online.batch = detail::get<std::size_t>(j_, p + "online.batch");
        t.online.lr = detail::get<double>(j_, p + "online.lr");
        t.online.pso.beta = detail::get<double>(j_, p + "online.beta");
        t.online.seed = seed();
        return t;
    }

    ShiftTask shift() const {
        const std::string p = "tasks.shift.";
        ShiftTask t;
        t.radius_delta = detail::get<double>(j_, p + "radius_delta");
        t.targets_per_condition = detail::get<std::size_t>(j_, p + "targets_per_condition");
        t.target_seed = detail::get<std::uint64_t>(j_, p + "target_seed");
        t.reference_seed = detail::get<std::uint64_t>(j_, p + "reference_seed");
        t.offline = finetune(p + "offline", PSOConfig::offline_default());
        t.naive = finetune(p + "naive", PSOConfig::offline_default());
        return t;
    }

    ConceptTask concept_task() const {
        const std::string p = "tasks.concept.";
        ConceptTask t;
        t.condition = detail::get<int>(j_, p + "condition");
        const auto c = detail::get<std::array<double, 2>>(j_, p + "center");
        t.center = {c[0], c[1]};
        t.points = detail::get<std::size_t>(j_, p + "points");
        t.spread = detail::get<double>(j_, p + "spread");
        t.point_seed = detail::get<std::uint64_t>(j_, p + "point_seed");
        t.radius = detail::get<double>(j_, p + "radius");
        t.full = finetune(p + "full", PSOConfig::full_default());
        return t;
    }

    SelfTask self_task() const {
        SelfTask t;
        t.target_seed = detail::get<std::uint64_t>(j_, "tasks.self.target_seed");
        t.full = finetune("tasks.self.full", PSOConfig::full_default());
        return t;
    }

private:
    explicit RunConfig(json j) : j_(std::move(j)) {
        // Resolve every typed view once so a bad value fails at load time.
        const auto data = dataset();
        const auto sched = schedule();
        grid(sched);
        architecture(data.num_conditions());
        teacher(architecture(data.num_conditions()));
        distill();
        reward(data);
        eval();
        preference().offline.pso.validate();
        preference().online.pso.validate();
        shift().offline.pso.validate();
        concept_task().full.pso.validate();
        self_task().full.pso.validate();
        output_dir();
    }

    FinetuneConfig finetune(const std::string& p, PSOConfig pso) const {
        FinetuneConfig f;
        f.steps = detail::get<long>(j_, p + ".steps");
        f.batch = detail::get<std::size_t>(j_, p + ".batch");
        f.lr = detail::get<double>(j_, p + ".lr");
        if (j_.at(json::json_pointer("/" + replace_dots(p))).contains("beta")) pso.beta = detail::get<double>(j_, p + ".beta");
        f.pso = pso;
        f.seed = seed();
        return f;
    }

    static std::string replace_dots(std::string s) {
        for (char& ch : s)
            if (ch == '.') ch = '/';
        return s;
    }

    static ConditionSpec condition_from_json(const json& c) {
        static const json schema = json::parse(
            R"({"kind":0,"means":0,"stds":0,"weights":0,"center":0,"radius":0,"noise":0})");
        detail::check_known_keys(c, schema, "dataset.custom[]");
        ConditionSpec s;
        try {
            s.kind = generator_kind_from_string(c.at("kind").get<std::string>());
            if (c.contains("means"))
                for (const auto& m : c.at("means").get<std::vector<std::array<double, 2>>>()) s.means.push_back({m[0], m[1]});
            if (c.contains("stds")) s.stds = c.at("stds").get<std::vector<double>>();
            if (c.contains("weights")) s.weights = c.at("weights").get<std::vector<double>>();
            if (c.contains("center")) {
                const auto m = c.at("center").get<std::array<double, 2>>();
                s.center = {m[0], m[1]};
            }
            if (c.contains("radius")) s.radius = c.at("radius").get<double>();
            if (c.contains("noise")) s.noise = c.at("noise").get<double>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("malformed dataset.custom entry: ") + e.what());
        }
        return s;
    }

    json j_;
};

} // namespace pso
