// Command-line driver: data generation, teacher training, distillation,
// fine-tuning, sampling, evaluation, comparison and calibration. Every command
// writes manifest.json next to its outputs; `rerun` replays a manifest and
// checks that the outputs come out byte-identical.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pso/checkpoint.hpp"
#include "pso/io.hpp"
#include "pso/pipeline.hpp"

#ifndef PSO_VERSION
#define PSO_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pso;

namespace {

class DeterminismError : public Error {
public:
    explicit DeterminismError(const std::string& m) : Error("determinism", m) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& m) : Error("usage", m) {}
};

/// Files written by one command, keyed by name relative to the output dir.
struct Outputs {
    fs::path dir;
    std::map<std::string, std::string> hashes;

    void write(const std::string& name, const std::string& content) {
        write_file((dir / name).string(), content);
        hashes[name] = fmt_hex64(fnv1a(content));
    }
};

struct Inputs {
    json files = json::object();

    std::string read(const std::string& role, const std::string& path) {
        std::string text = read_file(path);
        files[role] = {{"path", fs::absolute(path).lexically_normal().string()}, {"fnv1a", fmt_hex64(fnv1a(text))}};
        return text;
    }
};

fs::path resolve_out(const std::string& out, const RunConfig& cfg, const std::string& command) {
    fs::path p = out.empty() ? fs::path(cfg.output_dir()) / command : fs::path(out);
    if (const char* root = std::getenv("PSO_OUTPUT_ROOT"); root && *root && p.is_relative()) p = fs::path(root) / p;
    return p;
}

Checkpoint load_checkpoint(Inputs& in, const std::string& role, const std::string& path) {
    if (path.empty()) throw UsageError("--" + role + " is required");
    return Checkpoint::parse(in.read(role, path));
}

Checkpoint make_checkpoint(Role role, const Denoiser& net, const Setup& s, const TimeGrid* grid,
                           std::uint64_t reference_hash = 0) {
    Checkpoint c;
    c.role = role;
    c.arch = net.arch();
    c.schedule = schedule_descriptor(s.sched);
    if (grid) c.grid = std::vector<int>(grid->timesteps().rbegin(), grid->timesteps().rend());
    c.config_hash = s.cfg.hash();
    c.seed = s.cfg.seed();
    c.reference_hash = reference_hash;
    c.params.assign(net.params().begin(), net.params().end());
    return c;
}

std::string loss_csv(const std::vector<double>& curve) {
    std::string s = "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) s += std::to_string(i) + ',' + fmt_double(curve[i]) + '\n';
    return s;
}

std::string metrics_csv(const std::vector<StepMetrics>& m) {
    std::string s = "step,loss,mean_margin,implicit_accuracy,pairs\n";
    for (const auto& r : m)
        s += std::to_string(r.step) + ',' + fmt_double(r.loss) + ',' + fmt_double(r.mean_margin) + ',' +
             fmt_double(r.implicit_accuracy) + ',' + std::to_string(r.pairs) + '\n';
    return s;
}

LabeledPoints flatten(const std::vector<SampleSet>& sets) {
    LabeledPoints p;
    for (const auto& s : sets) {
        p.points.insert(p.points.end(), s.points.begin(), s.points.end());
        p.conditions.insert(p.conditions.end(), s.points.size(), s.condition);
    }
    return p;
}

template <class T>
T arg(const json& a, const std::string& key) {
    return a.at(key).get<T>();
}

// ---------------------------------------------------------------------------
// Commands. Each reads only its json args, the config and its input files.

void cmd_gen_data(const Setup& s, const json&, Inputs&, Outputs& out) {
    const auto t = s.cfg.teacher(s.arch);
    const LabeledPoints cache = s.data.generate(t.train_samples_per_condition, t.data_seed);
    out.write("data.csv", format_points(cache));
    LabeledPoints preview;
    for (std::size_t i = 0; i < cache.size(); ++i)
        if (i % t.train_samples_per_condition < 256) {
            preview.points.push_back(cache.points[i]);
            preview.conditions.push_back(cache.conditions[i]);
        }
    out.write("preview.csv", format_points(preview));
    json conds = json::array();
    for (const auto& c : s.data.conditions()) {
        json centers = json::array();
        for (const Vec2& m : c.mode_centers()) centers.push_back({m.x, m.y});
        conds.push_back({{"kind", to_string(c.kind)}, {"mode_centers", centers}});
    }
    out.write("dataset.json", json{{"conditions", conds}}.dump(2) + "\n");
}

void cmd_train_teacher(const Setup& s, const json&, Inputs&, Outputs& out) {
    auto r = train_teacher(s.data, s.sched, s.cfg.teacher(s.arch));
    out.write("teacher.ckpt", make_checkpoint(Role::teacher, r.net, s, nullptr).serialize());
    out.write("loss.csv", loss_csv(r.loss_curve));
}

void cmd_distill(const Setup& s, const json& a, Inputs& in, Outputs& out) {
    const Checkpoint t = load_checkpoint(in, "teacher", arg<std::string>(a, "teacher"));
    if (t.role != Role::teacher) throw CompatibilityError("distill expects a teacher checkpoint, got " + to_string(t.role));
    check_compatible(t, s.arch, s.sched, nullptr);
    auto r = distill_student(t.model(), s.data, s.sched, s.grid, s.cfg.distill());
    out.write("student.ckpt", make_checkpoint(Role::student, r.net, s, &s.grid).serialize());
    out.write("loss.csv", loss_csv(r.loss_curve));
}

void cmd_finetune(const Setup& s, const json& a, Inputs& in, Outputs& out) {
    const Checkpoint st = load_checkpoint(in, "student", arg<std::string>(a, "student"));
    if (st.role == Role::teacher) throw CompatibilityError("finetune expects a student checkpoint, got a teacher");
    check_compatible(st, s.arch, s.sched, &s.grid);
    const Denoiser student = st.model();
    const auto mode = arg<std::string>(a, "mode");
    std::string task = arg<std::string>(a, "task");
    const auto pairs_path = arg<std::string>(a, "pairs");
    const auto targets_path = arg<std::string>(a, "targets");

    FinetuneResult r{student, 0, {}, {}};
    if (mode == "offline") {
        if (task.empty()) task = "preference";
        FinetuneConfig fc;
        std::vector<PairRecord> pairs;
        if (task == "preference") {
            fc = s.cfg.preference().offline;
            if (pairs_path.empty()) pairs = preference_pairs(s.data, s.reward, s.cfg.preference());
        } else if (task == "shift") {
            const ShiftTask sh = s.cfg.shift();
            fc = sh.offline;
            if (pairs_path.empty())
                pairs = shift_pairs(student, shifted_dataset(s.data, sh.radius_delta).generate(sh.targets_per_condition, sh.target_seed),
                                    s.grid, sh.reference_seed);
        } else {
            throw UsageError("offline fine-tuning supports --task preference|shift");
        }
        if (!pairs_path.empty()) pairs = parse_pairs(in.read("pairs", pairs_path));
        out.write("pairs.csv", format_pairs(pairs));
        r = finetune_offline(student, pairs, s.grid, fc);
    } else if (mode == "online") {
        if (!task.empty() && task != "preference") throw UsageError("online fine-tuning supports --task preference");
        std::vector<int> conds;
        for (int k = 0; k < s.K(); ++k) conds.push_back(k);
        r = finetune_online(student, conds, s.reward, s.grid, s.cfg.preference().online);
    } else if (mode == "full" || mode == "naive") {
        LabeledPoints targets;
        FinetuneConfig fc;
        if (mode == "full") {
            if (!task.empty() && task != "concept") throw UsageError("full fine-tuning supports --task concept");
            fc = s.cfg.concept_task().full;
            if (targets_path.empty()) targets = concept_targets(s.cfg.concept_task());
        } else {
            if (!task.empty() && task != "shift") throw UsageError("naive fine-tuning supports --task shift");
            const ShiftTask sh = s.cfg.shift();
            fc = sh.naive;
            if (targets_path.empty())
                targets = shifted_dataset(s.data, sh.radius_delta).generate(sh.targets_per_condition, sh.target_seed);
        }
        if (!targets_path.empty()) targets = parse_points(in.read("targets", targets_path));
        out.write("targets.csv", format_points(targets));
        r = mode == "full" ? finetune_full(student, targets, s.grid, fc) : naive_finetune(student, targets, s.sched, fc);
    } else {
        throw UsageError("--mode must be offline, online, full or naive");
    }
    out.write("tuned.ckpt", make_checkpoint(Role::tuned_student, r.net, s, &s.grid, r.reference_hash).serialize());
    out.write("metrics.csv", metrics_csv(r.metrics));
    std::string w;
    for (const auto& line : r.warnings) w += line + '\n';
    out.write("warnings.txt", w);
    for (const auto& line : r.warnings) std::cerr << "warning: " << line << '\n';
}

/// Samples from a checkpoint: students use an even grid of `steps` points,
/// teachers run DDIM with `steps` steps. steps = 0 picks the checkpoint's own
/// grid or eval.teacher_steps.
std::vector<SampleSet> draw(const Setup& s, const Checkpoint& c, int steps, std::size_t per, std::uint64_t seed,
                            int condition) {
    const Denoiser net = c.model();
    std::vector<SampleSet> sets;
    if (c.role == Role::teacher) {
        sets = sample_teacher(net, s.sched, steps > 0 ? steps : s.cfg.eval().teacher_steps, s.K(), per, seed);
    } else {
        const TimeGrid g = steps > 0 ? s.cfg.grid(s.sched, steps) : checkpoint_grid(c, s.sched);
        sets = sample_student(net, g, s.K(), per, seed);
    }
    if (condition >= 0) {
        if (condition >= s.K()) throw InputDomainError("condition " + std::to_string(condition) + " out of range");
        return {sets[static_cast<std::size_t>(condition)]};
    }
    return sets;
}

void cmd_sample(const Setup& s, const json& a, Inputs& in, Outputs& out) {
    const Checkpoint c = load_checkpoint(in, "checkpoint", arg<std::string>(a, "checkpoint"));
    check_compatible(c, s.arch, s.sched, nullptr);
    const auto sets = draw(s, c, arg<int>(a, "steps"), arg<std::size_t>(a, "n"), arg<std::uint64_t>(a, "seed"),
                           arg<int>(a, "condition"));
    out.write("samples.csv", format_points(flatten(sets)));
}

void cmd_eval(const Setup& s, const json& a, Inputs& in, Outputs& out) {
    const Checkpoint c = load_checkpoint(in, "checkpoint", arg<std::string>(a, "checkpoint"));
    check_compatible(c, s.arch, s.sched, nullptr);
    const auto ref = arg<std::string>(a, "reference");
    SyntheticDataset reference = s.data;
    if (ref == "shifted") reference = shifted_dataset(s.data, s.cfg.shift().radius_delta);
    else if (ref != "data") throw UsageError("--reference must be data or shifted");
    const EvalConfig e = s.cfg.eval();
    const auto rep = evaluate(draw(s, c, arg<int>(a, "steps"), e.samples_per_condition, e.sample_seed, -1), reference, s);
    out.write("report.txt", rep.to_text());
    out.write("report.json", rep.to_json().dump(2) + "\n");
}

MetricReport load_report(Inputs& in, const std::string& role, const std::string& path) {
    try {
        return MetricReport::from_json(json::parse(in.read(role, path)));
    } catch (const json::exception& e) {
        throw LoadError("'" + path + "' is not a metric report: " + e.what());
    }
}

void cmd_compare(const Setup&, const json& a, Inputs& in, Outputs& out) {
    const auto before = load_report(in, "before", arg<std::string>(a, "before"));
    const auto after = load_report(in, "after", arg<std::string>(a, "after"));
    CompareThresholds th;
    th.min_reward_delta = arg<double>(a, "min_reward_delta");
    if (a.at("max_energy_distance_delta").is_number()) th.max_energy_distance_delta = arg<double>(a, "max_energy_distance_delta");
    const auto cmp = compare_runs(before, after, th);
    out.write("compare.txt", cmp.to_text());
    out.write("compare.json", cmp.to_json().dump(2) + "\n");
    for (const auto& w : cmp.warnings) std::cerr << "warning: " << w << '\n';
}

/// Per-condition histogram densities over [-extent, extent]^2.
void cmd_plot_data(const Setup&, const json& a, Inputs& in, Outputs& out) {
    const auto files = arg<std::vector<std::string>>(a, "files");
    const int bins = arg<int>(a, "bins");
    const double extent = arg<double>(a, "extent");
    if (files.empty()) throw UsageError("plot-data needs at least one sample CSV");
    if (bins < 1 || !(extent > 0.0)) throw UsageError("--bins must be >= 1 and --extent > 0");
    const double cell = 2.0 * extent / bins;
    for (std::size_t f = 0; f < files.size(); ++f) {
        const LabeledPoints pts = parse_points(in.read("file" + std::to_string(f), files[f]));
        std::map<int, std::vector<double>> hist;
        std::map<int, std::size_t> totals;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            auto& h = hist[pts.conditions[i]];
            if (h.empty()) h.assign(static_cast<std::size_t>(bins) * bins, 0.0);
            ++totals[pts.conditions[i]];
            const int ix = static_cast<int>(std::floor((pts.points[i].x + extent) / cell));
            const int iy = static_cast<int>(std::floor((pts.points[i].y + extent) / cell));
            if (ix < 0 || iy < 0 || ix >= bins || iy >= bins) continue;
            h[static_cast<std::size_t>(iy) * bins + ix] += 1.0;
        }
        std::string csv = "condition,x,y,density\n";
        for (const auto& [c, h] : hist)
            for (int iy = 0; iy < bins; ++iy)
                for (int ix = 0; ix < bins; ++ix)
                    csv += std::to_string(c) + ',' + fmt_double(-extent + (ix + 0.5) * cell) + ',' +
                           fmt_double(-extent + (iy + 0.5) * cell) + ',' +
                           fmt_double(h[static_cast<std::size_t>(iy) * bins + ix] /
                                      (static_cast<double>(totals[c]) * cell * cell)) +
                           '\n';
        out.write("density_" + std::to_string(f) + ".csv", csv);
    }
}

void cmd_calibrate(const Setup& s, const json& a, Inputs&, Outputs& out) {
    const auto cal = run_calibration(s, [](const std::string& stage, double sec) {
        std::cerr << "calibrate: " << stage << " done in " << fmt_double(std::round(sec * 10.0) / 10.0) << "s\n";
    });
    out.write("baseline.json", cal.baseline.dump(2) + "\n");
    if (arg<bool>(a, "save_checkpoints")) {
        const auto& m = cal.models;
        out.write("teacher.ckpt", make_checkpoint(Role::teacher, m.teacher, s, nullptr).serialize());
        out.write("student.ckpt", make_checkpoint(Role::student, m.student, s, &s.grid).serialize());
        const auto ref = m.student.hash();
        out.write("preference_offline.ckpt", make_checkpoint(Role::tuned_student, m.offline, s, &s.grid, ref).serialize());
        out.write("preference_online.ckpt", make_checkpoint(Role::tuned_student, m.online, s, &s.grid, ref).serialize());
        out.write("shift_pso.ckpt", make_checkpoint(Role::tuned_student, m.shift_pso, s, &s.grid, ref).serialize());
        out.write("shift_naive.ckpt", make_checkpoint(Role::tuned_student, m.shift_naive, s, &s.grid, ref).serialize());
        out.write("concept_full.ckpt", make_checkpoint(Role::tuned_student, m.concept_tuned, s, &s.grid, ref).serialize());
    }
    std::cout << cal.baseline.dump(2) << '\n';
}

using Command = void (*)(const Setup&, const json&, Inputs&, Outputs&);

const std::map<std::string, Command>& commands() {
    static const std::map<std::string, Command> m{
        {"gen-data", cmd_gen_data}, {"train-teacher", cmd_train_teacher}, {"distill", cmd_distill},
        {"finetune", cmd_finetune}, {"sample", cmd_sample},               {"eval", cmd_eval},
        {"compare", cmd_compare},   {"plot-data", cmd_plot_data},         {"calibrate", cmd_calibrate},
    };
    return m;
}

/// Runs one command into `dir` and writes its manifest. Returns the output hashes.
std::map<std::string, std::string> execute(const std::string& name, const json& args, const RunConfig& cfg,
                                           const fs::path& dir) {
    const auto start = std::chrono::steady_clock::now();
    const Setup s(cfg);
    fs::create_directories(dir);
    Inputs in;
    Outputs out{dir, {}};
    commands().at(name)(s, args, in, out);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json manifest{{"format", "pso-manifest 1"},
                        {"command", name},
                        {"args", args},
                        {"config", cfg.raw()},
                        {"config_hash", fmt_hex64(cfg.hash())},
                        {"seed", cfg.seed()},
                        {"version", PSO_VERSION},
                        {"wall_time_seconds", wall},
                        {"inputs", in.files},
                        {"outputs", out.hashes}};
    write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    return out.hashes;
}

void rerun(const std::string& manifest_path, const std::string& out_flag) {
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw LoadError("'" + manifest_path + "' is not a manifest: " + e.what());
    }
    if (m.value("format", "") != "pso-manifest 1") throw LoadError("'" + manifest_path + "' is not a manifest");
    const std::string name = m.at("command").get<std::string>();
    if (!commands().contains(name)) throw LoadError("manifest names unknown command '" + name + "'");
    const RunConfig cfg = RunConfig::from_json(m.at("config"));
    if (fmt_hex64(cfg.hash()) != m.at("config_hash").get<std::string>())
        throw CompatibilityError("manifest config does not hash to its recorded config_hash");
    for (const auto& [role, f] : m.at("inputs").items()) {
        const std::string now = fmt_hex64(fnv1a(read_file(f.at("path").get<std::string>())));
        if (now != f.at("fnv1a").get<std::string>())
            throw CompatibilityError("input '" + role + "' (" + f.at("path").get<std::string>() + ") changed since the run");
    }
    fs::path dir = out_flag.empty() ? fs::path(manifest_path).parent_path() / "rerun" : fs::path(out_flag);
    if (const char* root = std::getenv("PSO_OUTPUT_ROOT"); root && *root && !out_flag.empty() && dir.is_relative())
        dir = fs::path(root) / dir;
    const auto hashes = execute(name, m.at("args"), cfg, dir);
    const auto want = m.at("outputs").get<std::map<std::string, std::string>>();
    if (hashes != want) {
        std::string diff;
        for (const auto& [k, v] : want)
            if (!hashes.contains(k) || hashes.at(k) != v) diff += (diff.empty() ? "" : " ") + k;
        throw DeterminismError("rerun outputs differ from the manifest: " + (diff.empty() ? "output set" : diff));
    }
    std::cout << "rerun " << name << ": " << hashes.size() << " outputs identical in " << dir.string() << '\n';
}

int exit_code(const std::string& kind) {
    if (kind == "usage" || kind == "config") return 2;
    if (kind == "load") return 3;
    if (kind == "compatibility") return 4;
    if (kind == "training_failure" || kind == "numeric") return 5;
    if (kind == "determinism") return 6;
    return 1;
}

std::string one_line(std::string s) {
    for (char& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

int fail(const std::string& kind, const std::string& message) {
    std::cerr << "error: kind=" << kind << " message=" << one_line(message) << '\n';
    return exit_code(kind);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-step diffusion distillation and pairwise sample optimization on synthetic 2-D data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PSO_VERSION);

    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    auto common = [&](CLI::App* sc) {
        sc->add_option("--config", config_path, "Run config JSON; omitted keys take their documented defaults")
            ->check(CLI::ExistingFile);
        sc->add_option("--set", overrides, "Override one config value, e.g. --set teacher.steps=200 (repeatable)")
            ->allow_extra_args(false);
        sc->add_option("--out", out_dir, "Output directory (default <output_dir>/<command>, under $PSO_OUTPUT_ROOT if set)");
    };

    json args = json::object();
    std::string teacher, student, checkpoint, mode, task, pairs, targets, before, after, reference = "data", manifest;
    int steps = 0, condition = -1, bins = 64;
    std::size_t n = 1024;
    std::uint64_t seed = 0;
    double min_reward_delta = 0.0, extent = 6.0;
    std::optional<double> max_ed_delta;
    std::vector<std::string> files;
    bool save_checkpoints = false;

    auto* gen = app.add_subcommand("gen-data", "Write the training cache, a preview and the mode centers");
    common(gen);
    auto* tt = app.add_subcommand("train-teacher", "Train the multi-step teacher; writes teacher.ckpt and loss.csv");
    common(tt);
    auto* di = app.add_subcommand("distill", "Distill a teacher into the few-step student; writes student.ckpt");
    common(di);
    di->add_option("--teacher", teacher, "Teacher checkpoint")->required();
    auto* ft = app.add_subcommand("finetune", "Fine-tune a student; writes tuned.ckpt and metrics.csv");
    common(ft);
    ft->add_option("--student", student, "Student checkpoint")->required();
    ft->add_option("--mode", mode, "offline | online | full | naive")->required()
        ->check(CLI::IsMember({"offline", "online", "full", "naive"}));
    ft->add_option("--task", task,
                   "Task supplying data and hyperparameters (offline: preference|shift, online: preference, "
                   "full: concept, naive: shift); default per mode");
    ft->add_option("--pairs", pairs, "Offline pair file (condition,tau_x,tau_y,rho_x,rho_y per line)");
    ft->add_option("--targets", targets, "Target points CSV (x,y,condition) for full or naive mode");
    auto* sa = app.add_subcommand("sample", "Draw samples; writes samples.csv (x,y,condition)");
    common(sa);
    sa->add_option("--checkpoint", checkpoint, "Checkpoint to sample")->required();
    sa->add_option("--n", n, "Samples per condition")->check(CLI::PositiveNumber);
    sa->add_option("--steps", steps, "Sampling steps; 0 uses the student's grid or eval.teacher_steps")
        ->check(CLI::NonNegativeNumber);
    sa->add_option("--seed", seed, "Sampling seed");
    sa->add_option("--condition", condition, "Only this condition (-1 for all)");
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint; writes report.txt and report.json");
    common(ev);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
    ev->add_option("--steps", steps, "Sampling steps; 0 uses the student's grid or eval.teacher_steps")
        ->check(CLI::NonNegativeNumber);
    ev->add_option("--reference", reference, "Reference distribution: data | shifted")
        ->check(CLI::IsMember({"data", "shifted"}));
    auto* cm = app.add_subcommand("compare", "Delta table between two report.json files");
    common(cm);
    cm->add_option("before", before, "Report before")->required()->check(CLI::ExistingFile);
    cm->add_option("after", after, "Report after")->required()->check(CLI::ExistingFile);
    cm->add_option("--min-reward-delta", min_reward_delta, "Pass requires reward delta >= this");
    cm->add_option("--max-ed-delta", max_ed_delta, "Pass requires energy distance delta <= this");
    auto* pd = app.add_subcommand("plot-data", "Per-condition density grids from sample CSVs");
    common(pd);
    pd->add_option("files", files, "Sample CSVs")->required()->check(CLI::ExistingFile);
    pd->add_option("--bins", bins, "Grid cells per axis")->check(CLI::PositiveNumber);
    pd->add_option("--extent", extent, "Half-width of the square grid")->check(CLI::PositiveNumber);
    auto* ca = app.add_subcommand("calibrate", "Run the full pipeline and write baseline.json");
    common(ca);
    ca->add_flag("--save-checkpoints", save_checkpoints, "Also write every trained checkpoint");
    auto* rr = app.add_subcommand("rerun", "Replay a manifest and verify byte-identical outputs");
    rr->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rr->add_option("--out", out_dir, "Output directory (default <manifest dir>/rerun)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (rr->parsed()) {
            rerun(manifest, out_dir);
            return 0;
        }
        CLI::App* sc = app.get_subcommands().front();
        const std::string name = sc->get_name();
        auto abs = [](const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); };
        if (name == "distill") args = {{"teacher", abs(teacher)}};
        if (name == "finetune")
            args = {{"student", abs(student)}, {"mode", mode}, {"task", task}, {"pairs", abs(pairs)}, {"targets", abs(targets)}};
        if (name == "sample")
            args = {{"checkpoint", abs(checkpoint)}, {"n", n}, {"steps", steps}, {"seed", seed}, {"condition", condition}};
        if (name == "eval") args = {{"checkpoint", abs(checkpoint)}, {"steps", steps}, {"reference", reference}};
        if (name == "compare")
            args = {{"before", abs(before)},
                    {"after", abs(after)},
                    {"min_reward_delta", min_reward_delta},
                    {"max_energy_distance_delta", max_ed_delta ? json(*max_ed_delta) : json(nullptr)}};
        if (name == "plot-data") {
            std::vector<std::string> absf;
            for (const auto& f : files) absf.push_back(abs(f));
            args = {{"files", absf}, {"bins", bins}, {"extent", extent}};
        }
        if (name == "calibrate") args = {{"save_checkpoints", save_checkpoints}};
        const RunConfig cfg = config_path.empty() ? RunConfig::from_json(json::object(), overrides)
                                                  : RunConfig::load(config_path, overrides);
        const fs::path dir = resolve_out(out_dir, cfg, name);
        execute(name, args, cfg, dir);
        std::cout << name << ": wrote " << dir.string() << '\n';
    } catch (const TrainingFailure& e) {
        return fail(e.kind(), std::string(e.what()) + " (step " + std::to_string(e.step()) + ")");
    } catch (const Error& e) {
        return fail(e.kind(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail("io", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
