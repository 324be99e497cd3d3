#pragma once

#include <algorithm>
#include <cstdio>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/mpc.hpp"
#include "dmpc/scenario_io.hpp"

namespace dmpc {

// The printed vehicle speed update mixes a force-valued friction term into a
// velocity equation and leaves the drag unnormalized, which makes the
// linearized update unstable. mass_normalized divides both by the mass and is
// the default; paper_literal keeps the printed form for fidelity runs.
enum class DragModel { MassNormalized, PaperLiteral };

inline std::string to_string(DragModel d) {
    return d == DragModel::MassNormalized ? "mass_normalized" : "paper_literal";
}

// Straight-road platoon: follower j tracks a constant-speed leader at gap
// (j+1)·target_gap. Vehicle state is (speed, position); scenarios are posed
// in error coordinates around the moving reference.
struct PlatoonConfig {
    int followers = 3;
    double sample_time = 0.1;       // s
    double drive_gain = 3700.0;     // N per unit input
    double drag_coefficient = 0.5;  // kg/m, before linearization
    double rolling_friction = 0.01;
    double mass = 1000.0;      // kg
    double gravity = 10.0;     // m/s^2
    double speed_limit = 25.0; // m/s, drag linearization anchor
    double speed_ref = 20.0;   // m/s, leader cruise speed
    double target_gap = 40.0;  // m, desired inter-vehicle distance
    double min_gap = 10.0;     // m, hard safety distance
    double input_limit = 1.0;  // |u| bound in absolute input units
    double speed_min = 5.0;    // m/s
    double speed_max = 25.0;   // m/s
    double q_speed = 1.0;
    double q_position = 0.5;
    double r_input = 0.1;
    int steps = 200;
    DragModel drag = DragModel::MassNormalized;
    // Same start for every follower, in error coordinates. The defaults put
    // each vehicle slightly fast and a few meters behind its slot, sized so
    // short horizons can only meet the terminal contraction row for small
    // alpha while N = 10 meets it everywhere: the cheapest terminal stage
    // cost reachable from here is 0.54x the start energy over 5 steps, 0.36x
    // over 8, and 0.25x over 10.
    double initial_speed_error = 2.0;
    double initial_position_error = -5.0;

    // Linearized drag gain: the quadratic law cv^2 replaced by c_app·v.
    double approx_drag() const { return 13.0 * drag_coefficient * speed_limit / 8.0; }

    double input_gain() const { return drive_gain * sample_time / mass; }

    double speed_decay() const {
        return drag == DragModel::MassNormalized
                   ? 1.0 - sample_time * approx_drag() / mass
                   : 1.0 - sample_time * approx_drag();
    }

    // Input holding the reference speed, from the steady state of the chosen
    // speed update. In paper_literal mode this sits far outside the input
    // box; the error-coordinate scenario is still well formed and reports the
    // resulting infeasibility honestly.
    double input_reference() const {
        const double friction = drag == DragModel::MassNormalized
                                    ? sample_time * rolling_friction * gravity
                                    : rolling_friction * mass * gravity;
        return ((1.0 - speed_decay()) * speed_ref + friction) / input_gain();
    }
};

inline std::vector<std::string> validate_platoon(const PlatoonConfig& cfg) {
    std::vector<std::string> out;
    auto fail = [&out](const std::string& m) { out.push_back(m); };
    if (cfg.followers < 1) fail("followers must be >= 1");
    if (!(cfg.sample_time > 0.0)) fail("sample_time must be > 0");
    if (!(cfg.drive_gain > 0.0)) fail("drive_gain must be > 0");
    if (!(cfg.drag_coefficient > 0.0)) fail("drag_coefficient must be > 0");
    if (cfg.rolling_friction < 0.0) fail("rolling_friction must be >= 0");
    if (!(cfg.mass > 0.0)) fail("mass must be > 0");
    if (!(cfg.gravity > 0.0)) fail("gravity must be > 0");
    if (!(cfg.speed_limit > 0.0)) fail("speed_limit must be > 0");
    if (!(cfg.input_limit > 0.0)) fail("input_limit must be > 0");
    if (!(cfg.speed_min < cfg.speed_max)) fail("speed bounds must be ordered");
    if (cfg.speed_ref < cfg.speed_min || cfg.speed_ref > cfg.speed_max)
        fail("speed_ref must lie within the speed bounds");
    if (!(cfg.min_gap > 0.0)) fail("min_gap must be > 0");
    if (!(cfg.target_gap > cfg.min_gap)) fail("target_gap must exceed min_gap");
    if (!(cfg.q_speed > 0.0)) fail("q_speed must be > 0");
    if (!(cfg.q_position > 0.0)) fail("q_position must be > 0");
    if (!(cfg.r_input > 0.0)) fail("r_input must be > 0");
    if (cfg.steps < 1) fail("steps must be >= 1");
    return out;
}

struct PlatoonScenario {
    Scenario scenario;
    std::vector<Reference> references;  // absolute (speed, position) per follower
    std::map<int, Vec> initial_state;   // error coordinates
    double input_reference = 0.0;       // scalar shift from error input to absolute
};

// Error-coordinate platoon scenario. The leader starts at position 0 and
// moves exactly at speed_ref, so references are linear in the step index and
// the error dynamics are time invariant with zero drift (mass_normalized) or
// a constant drift absorbed by the input shift (paper_literal).
inline PlatoonScenario build_platoon_scenario(const PlatoonConfig& cfg, int N, double alpha,
                                              double delta = 0.5,
                                              std::optional<double> gamma = std::nullopt,
                                              int q_max = 5,
                                              std::optional<double> d_min = std::nullopt) {
    auto problems = validate_platoon(cfg);
    if (!problems.empty()) throw InvalidArgument("platoon config: " + problems.front());

    const int n = cfg.followers;
    PlatoonScenario out;
    Scenario& sc = out.scenario;

    SubsystemModel car;
    car.A = (Mat(2, 2) << cfg.speed_decay(), 0.0, cfg.sample_time, 1.0).finished();
    car.B = (Mat(2, 1) << cfg.input_gain(), 0.0).finished();
    car.w = Vec::Zero(2);
    car.Q = (Mat(2, 2) << cfg.q_speed, 0.0, 0.0, cfg.q_position).finished();
    car.R = Mat::Constant(1, 1, cfg.r_input);
    const double ur = cfg.input_reference();
    car.u_min = Vec::Constant(1, -cfg.input_limit - ur);
    car.u_max = Vec::Constant(1, cfg.input_limit - ur);
    sc.models.assign(n, car);

    std::vector<std::pair<int, int>> edges;
    for (int j = 1; j < n; ++j) edges.emplace_back(j - 1, j);
    sc.graph = CouplingGraph(n, edges);

    int next_id = 0;
    auto local_row = [&](int agent, double a_speed, double a_pos, double offset) {
        CoupledConstraint c;
        c.id = next_id++;
        ConstraintTerm t;
        t.agent = agent;
        t.a = (Vec(2) << a_speed, a_pos).finished();
        t.offset = offset;
        c.terms.push_back(std::move(t));
        sc.constraints.push_back(std::move(c));
    };
    for (int j = 0; j < n; ++j) {
        local_row(j, 1.0, 0.0, -(cfg.speed_max - cfg.speed_ref));
        local_row(j, -1.0, 0.0, -(cfg.speed_ref - cfg.speed_min));
    }
    // Follower 0 keeps min_gap to the leader, which is not a decision maker;
    // in error coordinates that is a constant position-error ceiling.
    local_row(0, 0.0, 1.0, -(cfg.target_gap - cfg.min_gap));
    // Consecutive followers keep min_gap pairwise. One-sided: the platoon
    // order is fixed, so only "falling behind the predecessor by more than
    // the slack" is reachable.
    for (int j = 1; j < n; ++j) {
        CoupledConstraint c;
        c.id = next_id++;
        c.budget = cfg.target_gap - cfg.min_gap;
        ConstraintTerm pred;
        pred.agent = j - 1;
        pred.a = (Vec(2) << 0.0, -1.0).finished();
        ConstraintTerm mine;
        mine.agent = j;
        mine.a = (Vec(2) << 0.0, 1.0).finished();
        c.terms = {std::move(pred), std::move(mine)};
        sc.constraints.push_back(std::move(c));
    }

    sc.horizon = N;
    sc.alpha = alpha;
    sc.delta = delta;
    sc.q_max = q_max;
    sc.step_size = gamma;
    sc.gap_threshold = d_min;

    out.input_reference = ur;
    for (int j = 0; j < n; ++j) {
        out.initial_state[j] =
            (Vec(2) << cfg.initial_speed_error, cfg.initial_position_error).finished();
        Reference r;
        r.x0 = (Vec(2) << cfg.speed_ref, -static_cast<double>(j + 1) * cfg.target_gap).finished();
        r.step = (Vec(2) << 0.0, cfg.speed_ref * cfg.sample_time).finished();
        r.u = Vec::Constant(1, ur);
        out.references.push_back(std::move(r));
    }
    return out;
}

inline double total_stage_cost(const ClosedLoopTrace& trace) {
    double total = 0.0;
    for (const auto& rec : trace.steps) total += rec.stage_cost;
    return total;
}

enum class CellStatus { Ok, Infeasible, Error };

inline std::string to_string(CellStatus s) {
    switch (s) {
        case CellStatus::Ok: return "ok";
        case CellStatus::Infeasible: return "infeasible";
        case CellStatus::Error: return "error";
    }
    return "?";
}

struct SweepCell {
    int horizon = 0;
    double alpha = 0.0;
    CellStatus status = CellStatus::Error;
    double total_cost = 0.0;  // meaningful only when status == Ok
    int infeasible_step = -1;
    int completed_steps = 0;
    double mean_step_seconds = 0.0;
    double max_step_seconds = 0.0;
    std::string message;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // horizon-major, matching the input lists
};

// One grid cell: closed loop over cfg.steps. Infeasibility is a result, not
// an error; exceptions become Error cells so the rest of the grid survives.
inline SweepCell run_platoon_cell(const PlatoonConfig& cfg, int N, double alpha, double delta,
                                  int q_max,
                                  RedistributionMode mode = RedistributionMode::BudgetConserving,
                                  WeightScheme weights = WeightScheme::Metropolis) {
    SweepCell cell;
    cell.horizon = N;
    cell.alpha = alpha;
    try {
        auto ps = build_platoon_scenario(cfg, N, alpha, delta, std::nullopt, q_max);
        ps.scenario.mode = mode;
        ps.scenario.weight_scheme = weights;
        auto trace = simulate(ps.scenario, ps.initial_state, cfg.steps, ps.references);
        cell.completed_steps = static_cast<int>(trace.steps.size());
        double sum = 0.0;
        for (const auto& rec : trace.steps) {
            sum += rec.wall_seconds;
            cell.max_step_seconds = std::max(cell.max_step_seconds, rec.wall_seconds);
        }
        if (cell.completed_steps > 0) cell.mean_step_seconds = sum / cell.completed_steps;
        if (trace.status == TraceStatus::Completed) {
            cell.status = CellStatus::Ok;
            cell.total_cost = total_stage_cost(trace);
        } else {
            cell.status = CellStatus::Infeasible;
            cell.infeasible_step = trace.infeasible_step;
            cell.message = trace.failure_message;
        }
    } catch (const std::exception& e) {
        cell.status = CellStatus::Error;
        cell.message = e.what();
    }
    return cell;
}

// Cells are independent simulations, so they run concurrently; results are
// collected in grid order, which keeps the emitted CSV deterministic.
inline SweepResult run_sweep(const PlatoonConfig& cfg, const std::vector<int>& horizons,
                             const std::vector<double>& alphas, double delta = 0.5, int q_max = 5,
                             RedistributionMode mode = RedistributionMode::BudgetConserving,
                             WeightScheme weights = WeightScheme::Metropolis) {
    if (horizons.empty() || alphas.empty())
        throw InvalidArgument("run_sweep: horizon and alpha lists must be nonempty");
    std::vector<std::future<SweepCell>> jobs;
    for (int N : horizons)
        for (double a : alphas)
            jobs.push_back(std::async(std::launch::async, [&cfg, N, a, delta, q_max, mode, weights] {
                return run_platoon_cell(cfg, N, a, delta, q_max, mode, weights);
            }));
    SweepResult out;
    for (auto& job : jobs) out.cells.push_back(job.get());
    return out;
}

namespace bench_detail {

inline std::string fmt10(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace bench_detail

// Closed-loop trace as CSV, one row per step, in absolute coordinates. The
// layout is the 2-state vehicle one; references must cover every agent.
inline void write_trace_csv(std::ostream& os, const Scenario& sc, const ClosedLoopTrace& trace,
                            double input_reference = 0.0) {
    using bench_detail::fmt10;
    const int n = sc.agent_count();
    for (const auto& m : sc.models)
        if (m.nx() != 2 || m.nu() != 1)
            throw InvalidArgument("trace csv: expects 2-state, 1-input vehicle models");
    if (!trace.steps.empty() && static_cast<int>(trace.references.size()) != n)
        throw InvalidArgument("trace csv: trace lacks per-agent references");

    os << "step";
    for (int i = 0; i < n; ++i)
        os << ",speed_" << i << ",position_" << i << ",input_" << i << ",stage_cost_" << i;
    os << ",J\n";
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const auto& rec = trace.steps[k];
        os << k;
        for (int i = 0; i < n; ++i) {
            const Vec ref = trace.references[i].state_at(static_cast<int>(k));
            const Vec& x = rec.state.at(i);
            const Vec& u = rec.input.at(i);
            os << ',' << fmt10(x[0] + ref[0]) << ',' << fmt10(x[1] + ref[1]) << ','
               << fmt10(u[0] + input_reference) << ',' << fmt10(stage_cost(sc.models[i], x, u));
        }
        os << ',' << fmt10(rec.J) << '\n';
    }
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& sweep) {
    using bench_detail::fmt10;
    os << "N,alpha,status,total_cost,mean_time_s,max_time_s\n";
    for (const auto& c : sweep.cells) {
        os << c.horizon << ',' << fmt10(c.alpha) << ',' << to_string(c.status) << ',';
        if (c.status == CellStatus::Ok) os << fmt10(c.total_cost);
        os << ',';
        if (c.completed_steps > 0)
            os << fmt10(c.mean_step_seconds) << ',' << fmt10(c.max_step_seconds);
        else
            os << ',';
        os << '\n';
    }
}

inline void write_trace_csv(const std::string& path, const Scenario& sc,
                            const ClosedLoopTrace& trace, double input_reference = 0.0) {
    std::ostringstream ss;
    write_trace_csv(ss, sc, trace, input_reference);
    write_text_file(path, ss.str());
}

inline void write_sweep_csv(const std::string& path, const SweepResult& sweep) {
    std::ostringstream ss;
    write_sweep_csv(ss, sweep);
    write_text_file(path, ss.str());
}

inline Json platoon_to_json(const PlatoonConfig& cfg) {
    Json j;
    j["followers"] = cfg.followers;
    j["sample_time"] = cfg.sample_time;
    j["drive_gain"] = cfg.drive_gain;
    j["drag_coefficient"] = cfg.drag_coefficient;
    j["rolling_friction"] = cfg.rolling_friction;
    j["mass"] = cfg.mass;
    j["gravity"] = cfg.gravity;
    j["speed_limit"] = cfg.speed_limit;
    j["speed_ref"] = cfg.speed_ref;
    j["target_gap"] = cfg.target_gap;
    j["min_gap"] = cfg.min_gap;
    j["input_limit"] = cfg.input_limit;
    j["speed_min"] = cfg.speed_min;
    j["speed_max"] = cfg.speed_max;
    j["q_speed"] = cfg.q_speed;
    j["q_position"] = cfg.q_position;
    j["r_input"] = cfg.r_input;
    j["steps"] = cfg.steps;
    j["drag"] = to_string(cfg.drag);
    j["initial_speed_error"] = cfg.initial_speed_error;
    j["initial_position_error"] = cfg.initial_position_error;
    return j;
}

inline PlatoonConfig platoon_from_json(const Json& j, const std::string& where = "platoon") {
    using io_detail::as_bool;
    using io_detail::as_int;
    using io_detail::as_number;
    using io_detail::as_string;
    using io_detail::key_error;
    (void)as_bool;

    if (!j.is_object()) throw key_error(where, "expected an object");
    PlatoonConfig cfg;
    auto num = [&](const char* key, double& slot) {
        if (auto it = j.find(key); it != j.end() && !it->is_null())
            slot = as_number(*it, where + "." + key);
    };
    auto integer = [&](const char* key, int& slot) {
        if (auto it = j.find(key); it != j.end() && !it->is_null())
            slot = as_int(*it, where + "." + key);
    };
    integer("followers", cfg.followers);
    num("sample_time", cfg.sample_time);
    num("drive_gain", cfg.drive_gain);
    num("drag_coefficient", cfg.drag_coefficient);
    num("rolling_friction", cfg.rolling_friction);
    num("mass", cfg.mass);
    num("gravity", cfg.gravity);
    num("speed_limit", cfg.speed_limit);
    num("speed_ref", cfg.speed_ref);
    num("target_gap", cfg.target_gap);
    num("min_gap", cfg.min_gap);
    num("input_limit", cfg.input_limit);
    num("speed_min", cfg.speed_min);
    num("speed_max", cfg.speed_max);
    num("q_speed", cfg.q_speed);
    num("q_position", cfg.q_position);
    num("r_input", cfg.r_input);
    integer("steps", cfg.steps);
    if (auto it = j.find("drag"); it != j.end() && !it->is_null()) {
        const std::string d = as_string(*it, where + ".drag");
        if (d == "mass_normalized")
            cfg.drag = DragModel::MassNormalized;
        else if (d == "paper_literal")
            cfg.drag = DragModel::PaperLiteral;
        else
            throw key_error(where + ".drag", "unknown drag model '" + d + "'");
    }
    num("initial_speed_error", cfg.initial_speed_error);
    num("initial_position_error", cfg.initial_position_error);
    return cfg;
}

// A full experiment description: the platoon plus the single-cell parameters
// used by `simulate` and the grid used by `sweep`. Command-line flags
// override individual keys.
struct PlatoonRunConfig {
    PlatoonConfig platoon;
    int horizon = 10;
    double alpha = 0.1;
    double delta = 0.5;
    int q_max = 5;
    std::optional<double> gamma;
    std::optional<double> d_min;
    RedistributionMode mode = RedistributionMode::BudgetConserving;
    WeightScheme weights = WeightScheme::Metropolis;
    std::vector<int> sweep_horizons{5, 8, 10};
    std::vector<double> sweep_alphas{0.1, 0.3, 0.5, 0.7};
};

inline Json platoon_run_to_json(const PlatoonRunConfig& rc) {
    Json j;
    j["platoon"] = platoon_to_json(rc.platoon);
    Json run;
    run["horizon"] = rc.horizon;
    run["alpha"] = rc.alpha;
    run["delta"] = rc.delta;
    run["q_max"] = rc.q_max;
    run["gamma"] = rc.gamma ? Json(*rc.gamma) : Json(nullptr);
    run["d_min"] = rc.d_min ? Json(*rc.d_min) : Json(nullptr);
    run["mode"] = to_string(rc.mode);
    run["weights"] = to_string(rc.weights);
    j["run"] = std::move(run);
    Json sweep;
    sweep["horizons"] = rc.sweep_horizons;
    sweep["alphas"] = rc.sweep_alphas;
    j["sweep"] = std::move(sweep);
    return j;
}

inline PlatoonRunConfig platoon_run_from_json(const Json& j) {
    using io_detail::as_int;
    using io_detail::as_number;
    using io_detail::key_error;
    using io_detail::optional_number;

    if (!j.is_object()) throw ConfigError("config: expected a top-level object");
    PlatoonRunConfig rc;
    if (auto it = j.find("platoon"); it != j.end()) rc.platoon = platoon_from_json(*it);
    if (auto it = j.find("run"); it != j.end()) {
        const Json& run = *it;
        if (!run.is_object()) throw key_error("run", "expected an object");
        if (auto f = run.find("horizon"); f != run.end()) rc.horizon = as_int(*f, "run.horizon");
        if (auto f = run.find("alpha"); f != run.end()) rc.alpha = as_number(*f, "run.alpha");
        if (auto f = run.find("delta"); f != run.end()) rc.delta = as_number(*f, "run.delta");
        if (auto f = run.find("q_max"); f != run.end()) rc.q_max = as_int(*f, "run.q_max");
        rc.gamma = optional_number(run, "run", "gamma");
        rc.d_min = optional_number(run, "run", "d_min");
        if (auto f = run.find("mode"); f != run.end() && !f->is_null()) {
            const std::string m = io_detail::as_string(*f, "run.mode");
            if (m == "budget_conserving")
                rc.mode = RedistributionMode::BudgetConserving;
            else if (m == "paper_literal")
                rc.mode = RedistributionMode::PaperLiteral;
            else
                throw key_error("run.mode", "unknown mode '" + m + "'");
        }
        if (auto f = run.find("weights"); f != run.end() && !f->is_null()) {
            const std::string w = io_detail::as_string(*f, "run.weights");
            if (w == "metropolis")
                rc.weights = WeightScheme::Metropolis;
            else if (w == "uniform")
                rc.weights = WeightScheme::Uniform;
            else
                throw key_error("run.weights", "unknown scheme '" + w + "'");
        }
    }
    if (auto it = j.find("sweep"); it != j.end()) {
        const Json& sweep = *it;
        if (!sweep.is_object()) throw key_error("sweep", "expected an object");
        if (auto f = sweep.find("horizons"); f != sweep.end()) {
            if (!f->is_array()) throw key_error("sweep.horizons", "expected an array");
            rc.sweep_horizons.clear();
            for (std::size_t i = 0; i < f->size(); ++i)
                rc.sweep_horizons.push_back(
                    as_int((*f)[i], "sweep.horizons[" + std::to_string(i) + "]"));
        }
        if (auto f = sweep.find("alphas"); f != sweep.end()) {
            if (!f->is_array()) throw key_error("sweep.alphas", "expected an array");
            rc.sweep_alphas.clear();
            for (std::size_t i = 0; i < f->size(); ++i)
                rc.sweep_alphas.push_back(
                    as_number((*f)[i], "sweep.alphas[" + std::to_string(i) + "]"));
        }
    }
    return rc;
}

inline PlatoonRunConfig load_platoon_run(const std::string& path) {
    try {
        return platoon_run_from_json(read_json_file(path));
    } catch (const ConfigError& e) {
        if (std::string(e.what()).rfind(path, 0) == 0) throw;
        throw ConfigError(path + ": " + e.what());
    }
}

inline void save_platoon_run(const std::string& path, const PlatoonRunConfig& rc) {
    write_text_file(path, platoon_run_to_json(rc).dump(2) + "\n");
}

}  // namespace dmpc
