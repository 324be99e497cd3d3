// dmpc: platoon experiments and scenario tooling on top of the library.
//
// Exit codes, uniformly: 0 when a result was produced (feasible OR
// infeasible — infeasibility is a result), 1 when any cell or solve errored,
// 2 for unreadable/invalid configs and command-line mistakes.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dmpc/bench.hpp"
#include "dmpc/oracle.hpp"

namespace {

using namespace dmpc;

std::string fmt(double v) { return bench_detail::fmt10(v); }

// Every config key doubles as a flag; flags win over the file. Bound values
// are only copied into the run config when the user actually passed them.
struct RunFlags {
    PlatoonRunConfig v;
    std::string drag = "mass_normalized";
    std::string mode = "budget_conserving";
    std::string weights = "metropolis";
    double gamma = 0.0;
    double d_min = 0.0;
    int seed = 0;

    void attach(CLI::App* cmd, bool with_sweep_grid) {
        auto& p = v.platoon;
        cmd->add_option("--followers", p.followers, "number of follower vehicles");
        cmd->add_option("--sample-time", p.sample_time, "discretization step [s]");
        cmd->add_option("--drive-gain", p.drive_gain, "input force gain [N]");
        cmd->add_option("--drag-coefficient", p.drag_coefficient, "quadratic drag [kg/m]");
        cmd->add_option("--rolling-friction", p.rolling_friction, "rolling friction coefficient");
        cmd->add_option("--mass", p.mass, "vehicle mass [kg]");
        cmd->add_option("--gravity", p.gravity, "gravity [m/s^2]");
        cmd->add_option("--speed-limit", p.speed_limit, "drag linearization anchor [m/s]");
        cmd->add_option("--speed-ref", p.speed_ref, "leader cruise speed [m/s]");
        cmd->add_option("--target-gap", p.target_gap, "desired spacing [m]");
        cmd->add_option("--min-gap", p.min_gap, "hard safety spacing [m]");
        cmd->add_option("--input-limit", p.input_limit, "absolute input bound");
        cmd->add_option("--speed-min", p.speed_min, "lower speed bound [m/s]");
        cmd->add_option("--speed-max", p.speed_max, "upper speed bound [m/s]");
        cmd->add_option("--q-speed", p.q_speed, "speed error weight");
        cmd->add_option("--q-position", p.q_position, "position error weight");
        cmd->add_option("--r-input", p.r_input, "input weight");
        cmd->add_option("--steps", p.steps, "closed-loop steps");
        cmd->add_option("--drag", drag, "drag model")
            ->check(CLI::IsMember({"mass_normalized", "paper_literal"}));
        cmd->add_option("--initial-speed-error", p.initial_speed_error,
                        "per-follower start speed error [m/s]");
        cmd->add_option("--initial-position-error", p.initial_position_error,
                        "per-follower start position error [m]");

        cmd->add_option("--alpha", v.alpha, "terminal contraction fraction");
        cmd->add_option("--delta", v.delta, "coupling tightening fraction");
        cmd->add_option("--q-max", v.q_max, "consensus iterations per step");
        cmd->add_option("--gamma", gamma, "gradient step size override");
        cmd->add_option("--d-min", d_min, "redistribution gap threshold");
        cmd->add_option("--mode", mode, "budget redistribution mode")
            ->check(CLI::IsMember({"budget_conserving", "paper_literal"}));
        cmd->add_option("--weights", weights, "consensus averaging weights")
            ->check(CLI::IsMember({"metropolis", "uniform"}));
        cmd->add_option("--seed", seed,
                        "reserved for future stochastic variants; accepted and ignored "
                        "(runs are deterministic)");
        if (with_sweep_grid) {
            cmd->add_option("--horizons", v.sweep_horizons, "horizon grid")->delimiter(',');
            cmd->add_option("--alphas", v.sweep_alphas, "alpha grid")->delimiter(',');
        } else {
            cmd->add_option("--horizon", v.horizon, "prediction horizon N");
        }
    }

    PlatoonRunConfig resolve(CLI::App* cmd, const std::string& config_path) const {
        PlatoonRunConfig rc;
        if (!config_path.empty()) rc = load_platoon_run(config_path);
        auto& p = rc.platoon;
        auto hit = [cmd](const char* name) {
            const CLI::Option* o = cmd->get_option_no_throw(name);
            return o != nullptr && o->count() > 0;
        };
        if (hit("--followers")) p.followers = v.platoon.followers;
        if (hit("--sample-time")) p.sample_time = v.platoon.sample_time;
        if (hit("--drive-gain")) p.drive_gain = v.platoon.drive_gain;
        if (hit("--drag-coefficient")) p.drag_coefficient = v.platoon.drag_coefficient;
        if (hit("--rolling-friction")) p.rolling_friction = v.platoon.rolling_friction;
        if (hit("--mass")) p.mass = v.platoon.mass;
        if (hit("--gravity")) p.gravity = v.platoon.gravity;
        if (hit("--speed-limit")) p.speed_limit = v.platoon.speed_limit;
        if (hit("--speed-ref")) p.speed_ref = v.platoon.speed_ref;
        if (hit("--target-gap")) p.target_gap = v.platoon.target_gap;
        if (hit("--min-gap")) p.min_gap = v.platoon.min_gap;
        if (hit("--input-limit")) p.input_limit = v.platoon.input_limit;
        if (hit("--speed-min")) p.speed_min = v.platoon.speed_min;
        if (hit("--speed-max")) p.speed_max = v.platoon.speed_max;
        if (hit("--q-speed")) p.q_speed = v.platoon.q_speed;
        if (hit("--q-position")) p.q_position = v.platoon.q_position;
        if (hit("--r-input")) p.r_input = v.platoon.r_input;
        if (hit("--steps")) p.steps = v.platoon.steps;
        if (hit("--drag"))
            p.drag = drag == "paper_literal" ? DragModel::PaperLiteral
                                             : DragModel::MassNormalized;
        if (hit("--initial-speed-error")) p.initial_speed_error = v.platoon.initial_speed_error;
        if (hit("--initial-position-error"))
            p.initial_position_error = v.platoon.initial_position_error;

        if (hit("--horizon")) rc.horizon = v.horizon;
        if (hit("--alpha")) rc.alpha = v.alpha;
        if (hit("--delta")) rc.delta = v.delta;
        if (hit("--q-max")) rc.q_max = v.q_max;
        if (hit("--gamma")) rc.gamma = gamma;
        if (hit("--d-min")) rc.d_min = d_min;
        if (hit("--mode"))
            rc.mode = mode == "paper_literal" ? RedistributionMode::PaperLiteral
                                              : RedistributionMode::BudgetConserving;
        if (hit("--weights"))
            rc.weights = weights == "uniform" ? WeightScheme::Uniform : WeightScheme::Metropolis;
        if (hit("--horizons")) rc.sweep_horizons = v.sweep_horizons;
        if (hit("--alphas")) rc.sweep_alphas = v.sweep_alphas;
        return rc;
    }
};

int run_simulate(CLI::App* cmd, const RunFlags& flags, const std::string& config_path,
                 const std::string& out_path, const std::string& log_path) {
    PlatoonRunConfig rc = flags.resolve(cmd, config_path);
    auto ps = build_platoon_scenario(rc.platoon, rc.horizon, rc.alpha, rc.delta, rc.gamma,
                                     rc.q_max, rc.d_min);
    ps.scenario.mode = rc.mode;
    ps.scenario.weight_scheme = rc.weights;

    std::ofstream log;
    MessageSink sink;
    if (!log_path.empty()) {
        log.open(log_path);
        if (!log) throw IoError("cannot open " + log_path + " for writing");
        sink = [&log](const std::string& line) { log << line << '\n'; };
    }

    auto trace = simulate(ps.scenario, ps.initial_state, rc.platoon.steps, ps.references, sink);
    write_trace_csv(out_path, ps.scenario, trace, ps.input_reference);

    if (trace.status == TraceStatus::Completed) {
        std::cout << "completed " << trace.steps.size() << " steps, total cost "
                  << fmt(total_stage_cost(trace)) << "\n";
    } else {
        std::cout << "infeasible at step " << trace.infeasible_step << ": "
                  << trace.failure_message << "\n";
    }
    std::cout << "wrote " << out_path;
    if (!log_path.empty()) std::cout << " and " << log_path;
    std::cout << "\n";
    return 0;
}

int run_sweep_cmd(CLI::App* cmd, const RunFlags& flags, const std::string& config_path,
                  const std::string& out_path) {
    PlatoonRunConfig rc = flags.resolve(cmd, config_path);
    SweepResult sweep = run_sweep(rc.platoon, rc.sweep_horizons, rc.sweep_alphas, rc.delta,
                                  rc.q_max, rc.mode, rc.weights);
    write_sweep_csv(out_path, sweep);

    bool any_error = false;
    for (const auto& c : sweep.cells) {
        std::printf("N=%2d alpha=%-4s %-11s", c.horizon, fmt(c.alpha).c_str(),
                    to_string(c.status).c_str());
        if (c.status == CellStatus::Ok)
            std::printf(" cost %s  mean %.3fs max %.3fs", fmt(c.total_cost).c_str(),
                        c.mean_step_seconds, c.max_step_seconds);
        else if (c.status == CellStatus::Infeasible)
            std::printf(" step %d: %s", c.infeasible_step, c.message.c_str());
        else
            std::printf(" %s", c.message.c_str());
        std::printf("\n");
        any_error = any_error || c.status == CellStatus::Error;
    }
    std::cout << "wrote " << out_path << "\n";
    return any_error ? 1 : 0;
}

int run_validate(const std::string& path) {
    ScenarioFile sf;
    try {
        sf = load_scenario(path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    auto problems = validate_scenario(sf.scenario);
    // The lint covers the optional start state too: sizes first, constraint
    // residuals only when every size is right.
    if (!sf.initial_state.empty()) {
        bool sized = true;
        for (const auto& [agent, x] : sf.initial_state) {
            const int nx = sf.scenario.models[agent].nx();
            if (x.size() != nx) {
                problems.push_back("initial_state[" + std::to_string(agent) + "] has " +
                                   std::to_string(x.size()) + " entries, model has " +
                                   std::to_string(nx) + " states");
                sized = false;
            }
        }
        if (sized)
            for (const auto& msg : check_initial_feasibility(sf.scenario, sf.initial_state))
                problems.push_back("initial state: " + msg);
    }
    if (problems.empty()) {
        std::cout << "ok\n";
        return 0;
    }
    for (const auto& p : problems) std::cout << p << "\n";
    return 1;
}

int run_oracle_gap(const std::string& path, int q_max_override) {
    ScenarioFile sf;
    try {
        sf = load_scenario(path);
        if (sf.initial_state.empty())
            throw ConfigError(path + ": oracle-gap needs an initial_state entry");
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    Scenario sc = sf.scenario;
    if (q_max_override > 0) sc.q_max = q_max_override;
    auto problems = validate_scenario(sc);
    if (!problems.empty()) {
        std::cerr << path << ": " << problems.front() << "\n";
        return 2;
    }

    auto central = solve_centralized(sc, sf.initial_state);
    if (!central.feasible) {
        std::cout << "centralized: infeasible (" << central.message << ")\n";
        return 0;
    }
    std::cout << "centralized objective  " << fmt(central.objective) << "\n";

    auto step = mpc_step(sc, sf.initial_state);
    if (!step.feasible) {
        std::cout << "distributed: infeasible (" << step.message << ")\n";
        return 0;
    }
    std::cout << "distributed objective  " << fmt(step.J) << "  (q_max " << sc.q_max;
    if (step.fast_path) std::cout << ", fast path";
    std::cout << ")\n";
    const double gap = (step.J - central.objective) / std::max(1.0, std::abs(central.objective));
    std::cout << "relative gap           " << fmt(gap) << "\n";
    for (const auto& it : step.iterations) {
        double sum_phi = 0.0;
        for (const auto& [agent, phi] : it.phi) sum_phi += phi;
        std::printf("  q=%2d  sum_phi %s  messages z/lambda/gap %d/%d/%d\n", it.iteration,
                    fmt(sum_phi).c_str(), it.z_messages, it.lambda_messages, it.gap_messages);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distributed MPC platoon workbench"};
    app.require_subcommand(1);

    std::string config_path, out_path, log_path, scenario_path;
    int q_max_override = 0;

    RunFlags sim_flags;
    auto* sim = app.add_subcommand("simulate", "run one closed-loop platoon cell");
    sim->add_option("--config", config_path, "platoon run config (JSON)")
        ->check(CLI::ExistingFile);
    sim->add_option("--out", out_path, "trace CSV path")->default_val("trace.csv");
    sim->add_option("--message-log", log_path,
                    "write consensus messages, one 'TYPE step q constraint agent value' "
                    "line each");
    sim_flags.attach(sim, false);

    RunFlags sweep_flags;
    auto* swp = app.add_subcommand("sweep", "run a horizon x alpha grid");
    swp->add_option("--config", config_path, "platoon run config (JSON)")
        ->check(CLI::ExistingFile);
    swp->add_option("--out", out_path, "sweep CSV path")->default_val("sweep.csv");
    sweep_flags.attach(swp, true);

    auto* val = app.add_subcommand("validate", "lint a scenario file");
    val->add_option("scenario", scenario_path, "scenario file (JSON)")->required();

    auto* gap = app.add_subcommand("oracle-gap",
                                   "compare one distributed step against the centralized solve");
    gap->add_option("scenario", scenario_path, "scenario file with initial_state (JSON)")
        ->required();
    gap->add_option("--q-max", q_max_override, "override consensus iteration budget");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return run_simulate(sim, sim_flags, config_path, out_path, log_path);
        if (swp->parsed()) return run_sweep_cmd(swp, sweep_flags, config_path, out_path);
        if (val->parsed()) return run_validate(scenario_path);
        return run_oracle_gap(scenario_path, q_max_override);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}
