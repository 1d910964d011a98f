#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pso/denoiser.hpp"
#include "pso/error.hpp"
#include "pso/grid.hpp"
#include "pso/schedule.hpp"
#include "pso/text.hpp"

namespace pso {

enum class Role { teacher, student, tuned_student };

inline std::string to_string(Role r) {
    switch (r) {
    case Role::teacher: return "teacher";
    case Role::student: return "student";
    case Role::tuned_student: return "tuned-student";
    }
    return "?";
}

inline Role role_from_string(const std::string& s) {
    if (s == "teacher") return Role::teacher;
    if (s == "student") return Role::student;
    if (s == "tuned-student") return Role::tuned_student;
    throw LoadError("unknown checkpoint role '" + s + "'");
}

/// Inverse of Architecture::descriptor().
inline Architecture parse_descriptor(const std::string& d) {
    const auto fields = split(d, ';');
    if (fields.size() != 8 || fields[0] != "mlp-eps" || fields[1] != "act=asig" || fields[2] != "temb=lin")
        throw LoadError("unrecognised architecture descriptor '" + d + "'");
    auto value = [&](std::size_t i, const std::string& key) {
        if (fields[i].rfind(key + "=", 0) != 0) throw LoadError("descriptor field '" + key + "' missing in '" + d + "'");
        return fields[i].substr(key.size() + 1);
    };
    Architecture a;
    a.timesteps = static_cast<int>(parse_int(value(3, "T"), "T"));
    a.num_conditions = static_cast<int>(parse_int(value(4, "K"), "K"));
    a.time_freqs = static_cast<int>(parse_int(value(5, "F"), "F"));
    a.cond_dim = static_cast<int>(parse_int(value(6, "D"), "D"));
    a.hidden.clear();
    for (const auto& h : split(value(7, "hidden"), 'x')) a.hidden.push_back(static_cast<int>(parse_int(h, "hidden")));
    if (a.descriptor() != d) throw LoadError("non-canonical architecture descriptor '" + d + "'");
    return a;
}

inline std::string schedule_descriptor(const NoiseSchedule& s) {
    return "linear;T=" + std::to_string(s.T()) + ";beta_start=" + fmt_double(s.beta_start()) +
           ";beta_end=" + fmt_double(s.beta_end());
}

/// Text checkpoint. Layout:
///
///   pso-checkpoint <version>
///   role <teacher|student|tuned-student>
///   arch <descriptor>
///   schedule <descriptor>
///   grid <t_N,...,t_0 | none>
///   config_hash <16 hex digits>
///   seed <decimal>
///   reference_hash <16 hex digits>      (frozen reference of a tuned student, else 0)
///   params <count>
///   <one parameter per line, shortest round-trip decimal>
///   end
///
/// Parameters follow the forward order: the condition embedding table
/// (K rows of D), then for each layer the weight matrix (out x in,
/// row-major) followed by its bias.
struct Checkpoint {
    static constexpr int format_version = 1;

    Role role = Role::teacher;
    Architecture arch;
    std::string schedule;
    std::optional<std::vector<int>> grid; // t_N ... t_0, students only
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::uint64_t reference_hash = 0;
    std::vector<double> params;

    Denoiser model() const { return Denoiser::from_params(arch, params); }

    std::string serialize() const {
        std::ostringstream os;
        os << "pso-checkpoint " << format_version << '\n';
        os << "role " << to_string(role) << '\n';
        os << "arch " << arch.descriptor() << '\n';
        os << "schedule " << schedule << '\n';
        os << "grid ";
        if (grid) {
            for (std::size_t i = 0; i < grid->size(); ++i) os << (i ? "," : "") << (*grid)[i];
        } else {
            os << "none";
        }
        os << '\n';
        os << "config_hash " << fmt_hex64(config_hash) << '\n';
        os << "seed " << seed << '\n';
        os << "reference_hash " << fmt_hex64(reference_hash) << '\n';
        os << "params " << params.size() << '\n';
        for (double p : params) os << fmt_double(p) << '\n';
        os << "end\n";
        return os.str();
    }

    static Checkpoint parse(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        auto next = [&](const std::string& key) {
            if (!std::getline(in, line)) throw LoadError("checkpoint truncated before '" + key + "'");
            if (line.rfind(key + " ", 0) != 0) throw LoadError("checkpoint expected '" + key + "', got '" + line + "'");
            return line.substr(key.size() + 1);
        };
        auto hex = [](const std::string& s, const std::string& what) {
            if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
                throw LoadError("malformed " + what + " '" + s + "'");
            return static_cast<std::uint64_t>(std::stoull(s, nullptr, 16));
        };
        Checkpoint c;
        if (next("pso-checkpoint") != std::to_string(format_version))
            throw LoadError("unsupported checkpoint format version");
        c.role = role_from_string(next("role"));
        c.arch = parse_descriptor(next("arch"));
        c.schedule = next("schedule");
        const std::string g = next("grid");
        if (g != "none") {
            std::vector<int> t;
            for (const auto& s : split(g, ',')) t.push_back(static_cast<int>(parse_int(s, "grid")));
            c.grid = std::move(t);
        }
        c.config_hash = hex(next("config_hash"), "config hash");
        const std::string seed = next("seed");
        if (seed.empty() || seed.find_first_not_of("0123456789") != std::string::npos)
            throw LoadError("malformed seed '" + seed + "'");
        c.seed = std::stoull(seed);
        c.reference_hash = hex(next("reference_hash"), "reference hash");
        const long long n = parse_int(next("params"), "params");
        if (n < 0 || static_cast<std::size_t>(n) != c.arch.param_count())
            throw LoadError("parameter count " + std::to_string(n) + " does not match architecture (" +
                            std::to_string(c.arch.param_count()) + ")");
        c.params.resize(static_cast<std::size_t>(n));
        for (auto& p : c.params) {
            if (!std::getline(in, line)) throw LoadError("checkpoint truncated inside parameter block");
            p = parse_double(line, "parameter");
            if (!std::isfinite(p)) throw LoadError("non-finite parameter in checkpoint");
        }
        if (!std::getline(in, line) || line != "end") throw LoadError("checkpoint missing end marker");
        if (std::getline(in, line)) throw LoadError("trailing data after checkpoint end marker");
        if ((c.role == Role::teacher) == c.grid.has_value())
            throw LoadError("student checkpoints embed a grid and teacher checkpoints do not");
        return c;
    }

    void save(const std::string& path) const { write_file(path, serialize()); }
    static Checkpoint load(const std::string& path) { return parse(read_file(path)); }
};

/// Aborts with CompatibilityError unless the checkpoint was produced for the
/// same architecture, schedule and (for students) grid.
inline void check_compatible(const Checkpoint& c, const Architecture& arch, const NoiseSchedule& sched,
                             const TimeGrid* grid) {
    if (c.arch.descriptor() != arch.descriptor())
        throw CompatibilityError("checkpoint architecture '" + c.arch.descriptor() + "' does not match configured '" +
                                 arch.descriptor() + "'");
    if (c.schedule != schedule_descriptor(sched))
        throw CompatibilityError("checkpoint schedule '" + c.schedule + "' does not match configured '" +
                                 schedule_descriptor(sched) + "'");
    if (grid && c.grid) {
        std::vector<int> want;
        for (int n = grid->N(); n >= 0; --n) want.push_back(grid->t(n));
        if (*c.grid != want)
            throw CompatibilityError("checkpoint grid does not match configured grid " + grid->describe());
    }
}

/// The embedded grid of a student checkpoint, rebuilt against the schedule.
inline TimeGrid checkpoint_grid(const Checkpoint& c, const NoiseSchedule& sched) {
    if (!c.grid) throw CompatibilityError("teacher checkpoint carries no time grid");
    std::vector<int> t(c.grid->rbegin(), c.grid->rend());
    return TimeGrid(std::move(t), sched);
}

} // namespace pso
