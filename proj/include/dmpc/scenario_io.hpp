#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dmpc/model.hpp"

namespace dmpc {

// Malformed or schema-violating config content. The message carries the
// offending key path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem-level failure: unreadable or unwritable path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Insertion-ordered so saved files keep a stable, diffable key order.
using Json = nlohmann::ordered_json;

// A scenario config on disk: the scenario itself plus an optional measured
// initial state (needed by the CLI's oracle-gap subcommand).
struct ScenarioFile {
    Scenario scenario;
    std::map<int, Vec> initial_state;
};

namespace io_detail {

inline ConfigError key_error(const std::string& where, const std::string& what) {
    return ConfigError(where + ": " + what);
}

inline const Json& require(const Json& j, const std::string& where, const std::string& key) {
    if (!j.is_object()) throw key_error(where, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw key_error(where + "." + key, "missing required key");
    return *it;
}

inline double as_number(const Json& j, const std::string& where) {
    if (!j.is_number()) throw key_error(where, "expected a number");
    return j.get<double>();
}

inline int as_int(const Json& j, const std::string& where) {
    if (!j.is_number_integer()) throw key_error(where, "expected an integer");
    return j.get<int>();
}

inline bool as_bool(const Json& j, const std::string& where) {
    if (!j.is_boolean()) throw key_error(where, "expected a boolean");
    return j.get<bool>();
}

inline std::string as_string(const Json& j, const std::string& where) {
    if (!j.is_string()) throw key_error(where, "expected a string");
    return j.get<std::string>();
}

inline Json vec_to_json(const Vec& v) {
    Json out = Json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Json mat_to_json(const Mat& m) {
    Json out = Json::array();
    for (int r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(std::move(row));
    }
    return out;
}

inline Vec vec_from_json(const Json& j, const std::string& where) {
    if (!j.is_array()) throw key_error(where, "expected an array of numbers");
    Vec v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        v[static_cast<int>(i)] = as_number(j[i], where + "[" + std::to_string(i) + "]");
    return v;
}

inline Mat mat_from_json(const Json& j, const std::string& where) {
    if (!j.is_array()) throw key_error(where, "expected an array of rows");
    const int rows = static_cast<int>(j.size());
    if (rows == 0) return Mat();
    if (!j[0].is_array()) throw key_error(where + "[0]", "expected an array of numbers");
    const int cols = static_cast<int>(j[0].size());
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const auto& row = j[r];
        const std::string rw = where + "[" + std::to_string(r) + "]";
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw key_error(rw, "ragged matrix row");
        for (int c = 0; c < cols; ++c) m(r, c) = as_number(row[c], rw);
    }
    return m;
}

inline std::optional<double> optional_number(const Json& j, const std::string& where,
                                             const std::string& key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return as_number(*it, where + "." + key);
}

}  // namespace io_detail

inline std::string to_string(ConstraintSchedule s) {
    switch (s) {
        case ConstraintSchedule::EveryStage: return "every_stage";
        case ConstraintSchedule::TerminalOnly: return "terminal_only";
        case ConstraintSchedule::SlackSum: return "slack_sum";
    }
    return "?";
}

inline std::string to_string(RedistributionMode m) {
    return m == RedistributionMode::BudgetConserving ? "budget_conserving" : "paper_literal";
}

inline std::string to_string(WeightScheme w) {
    return w == WeightScheme::Metropolis ? "metropolis" : "uniform";
}

inline Json scenario_to_json(const Scenario& sc, const std::map<int, Vec>& initial_state = {}) {
    using io_detail::mat_to_json;
    using io_detail::vec_to_json;

    Json j;
    j["horizon"] = sc.horizon;
    j["alpha"] = sc.alpha;
    j["delta"] = sc.delta;
    j["q_max"] = sc.q_max;
    j["mode"] = to_string(sc.mode);
    j["weight_scheme"] = to_string(sc.weight_scheme);
    j["pin_slack_to_zero"] = sc.pin_slack_to_zero;
    j["penalty_weight"] = sc.penalty_weight ? Json(*sc.penalty_weight) : Json(nullptr);
    j["step_size"] = sc.step_size ? Json(*sc.step_size) : Json(nullptr);
    j["gap_threshold"] = sc.gap_threshold ? Json(*sc.gap_threshold) : Json(nullptr);

    Json graph;
    graph["nodes"] = sc.graph.node_count();
    Json edges = Json::array();
    for (auto [a, b] : sc.graph.edges()) edges.push_back(Json::array({a, b}));
    graph["edges"] = std::move(edges);
    j["graph"] = std::move(graph);

    Json agents = Json::array();
    for (const auto& m : sc.models) {
        Json a;
        a["A"] = mat_to_json(m.A);
        a["B"] = mat_to_json(m.B);
        a["w"] = vec_to_json(m.w);
        a["Q"] = mat_to_json(m.Q);
        a["R"] = mat_to_json(m.R);
        a["u_min"] = vec_to_json(m.u_min);
        a["u_max"] = vec_to_json(m.u_max);
        agents.push_back(std::move(a));
    }
    j["agents"] = std::move(agents);

    Json constraints = Json::array();
    for (const auto& c : sc.constraints) {
        Json cj;
        cj["id"] = c.id;
        cj["budget"] = c.budget;
        cj["schedule"] = to_string(c.schedule);
        if (c.delta_override) cj["delta"] = *c.delta_override;
        Json terms = Json::array();
        for (const auto& t : c.terms) {
            Json tj;
            tj["agent"] = t.agent;
            tj["a"] = vec_to_json(t.a);
            tj["offset"] = t.offset;
            if (t.M.size() > 0) tj["M"] = mat_to_json(t.M);
            terms.push_back(std::move(tj));
        }
        cj["terms"] = std::move(terms);
        constraints.push_back(std::move(cj));
    }
    j["constraints"] = std::move(constraints);

    if (!initial_state.empty()) {
        Json x0 = Json::array();
        for (const auto& [agent, x] : initial_state) {
            (void)agent;  // emitted in ascending id order; loader re-indexes by position
            x0.push_back(vec_to_json(x));
        }
        j["initial_state"] = std::move(x0);
    }
    return j;
}

inline ScenarioFile scenario_from_json(const Json& j) {
    using namespace io_detail;

    if (!j.is_object()) throw ConfigError("scenario: expected a top-level object");
    ScenarioFile out;
    Scenario& sc = out.scenario;

    sc.horizon = as_int(require(j, "scenario", "horizon"), "scenario.horizon");
    sc.alpha = as_number(require(j, "scenario", "alpha"), "scenario.alpha");
    sc.delta = as_number(require(j, "scenario", "delta"), "scenario.delta");
    if (auto it = j.find("q_max"); it != j.end()) sc.q_max = as_int(*it, "scenario.q_max");
    if (auto it = j.find("mode"); it != j.end()) {
        const std::string m = as_string(*it, "scenario.mode");
        if (m == "budget_conserving")
            sc.mode = RedistributionMode::BudgetConserving;
        else if (m == "paper_literal")
            sc.mode = RedistributionMode::PaperLiteral;
        else
            throw key_error("scenario.mode", "unknown mode '" + m + "'");
    }
    if (auto it = j.find("weight_scheme"); it != j.end()) {
        const std::string w = as_string(*it, "scenario.weight_scheme");
        if (w == "metropolis")
            sc.weight_scheme = WeightScheme::Metropolis;
        else if (w == "uniform")
            sc.weight_scheme = WeightScheme::Uniform;
        else
            throw key_error("scenario.weight_scheme", "unknown scheme '" + w + "'");
    }
    if (auto it = j.find("pin_slack_to_zero"); it != j.end() && !it->is_null())
        sc.pin_slack_to_zero = as_bool(*it, "scenario.pin_slack_to_zero");
    sc.penalty_weight = optional_number(j, "scenario", "penalty_weight");
    sc.step_size = optional_number(j, "scenario", "step_size");
    sc.gap_threshold = optional_number(j, "scenario", "gap_threshold");

    const Json& gj = require(j, "scenario", "graph");
    const int nodes = as_int(require(gj, "scenario.graph", "nodes"), "scenario.graph.nodes");
    std::vector<std::pair<int, int>> edges;
    if (auto it = gj.find("edges"); it != gj.end()) {
        if (!it->is_array()) throw key_error("scenario.graph.edges", "expected an array");
        for (std::size_t e = 0; e < it->size(); ++e) {
            const auto& ej = (*it)[e];
            const std::string ew = "scenario.graph.edges[" + std::to_string(e) + "]";
            if (!ej.is_array() || ej.size() != 2) throw key_error(ew, "expected a pair [a, b]");
            edges.emplace_back(as_int(ej[0], ew), as_int(ej[1], ew));
        }
    }
    try {
        sc.graph = CouplingGraph(nodes, edges);
    } catch (const InvalidArgument& e) {
        throw key_error("scenario.graph", e.what());
    }

    const Json& aj = require(j, "scenario", "agents");
    if (!aj.is_array() || aj.empty())
        throw key_error("scenario.agents", "expected a nonempty array");
    for (std::size_t i = 0; i < aj.size(); ++i) {
        const std::string aw = "scenario.agents[" + std::to_string(i) + "]";
        const auto& a = aj[i];
        SubsystemModel m;
        m.A = mat_from_json(require(a, aw, "A"), aw + ".A");
        m.B = mat_from_json(require(a, aw, "B"), aw + ".B");
        m.w = vec_from_json(require(a, aw, "w"), aw + ".w");
        m.Q = mat_from_json(require(a, aw, "Q"), aw + ".Q");
        m.R = mat_from_json(require(a, aw, "R"), aw + ".R");
        m.u_min = vec_from_json(require(a, aw, "u_min"), aw + ".u_min");
        m.u_max = vec_from_json(require(a, aw, "u_max"), aw + ".u_max");
        sc.models.push_back(std::move(m));
    }

    if (auto it = j.find("constraints"); it != j.end()) {
        if (!it->is_array()) throw key_error("scenario.constraints", "expected an array");
        for (std::size_t ci = 0; ci < it->size(); ++ci) {
            const std::string cw = "scenario.constraints[" + std::to_string(ci) + "]";
            const auto& cj = (*it)[ci];
            CoupledConstraint c;
            c.id = as_int(require(cj, cw, "id"), cw + ".id");
            c.budget = as_number(require(cj, cw, "budget"), cw + ".budget");
            const std::string sched = as_string(require(cj, cw, "schedule"), cw + ".schedule");
            if (sched == "every_stage")
                c.schedule = ConstraintSchedule::EveryStage;
            else if (sched == "terminal_only")
                c.schedule = ConstraintSchedule::TerminalOnly;
            else if (sched == "slack_sum")
                throw key_error(cw + ".schedule",
                                "slack-sum rows are constructed at runtime, not configured");
            else
                throw key_error(cw + ".schedule", "unknown schedule '" + sched + "'");
            if (auto dit = cj.find("delta"); dit != cj.end() && !dit->is_null())
                c.delta_override = as_number(*dit, cw + ".delta");
            const Json& terms = require(cj, cw, "terms");
            if (!terms.is_array() || terms.empty())
                throw key_error(cw + ".terms", "expected a nonempty array");
            for (std::size_t ti = 0; ti < terms.size(); ++ti) {
                const std::string tw = cw + ".terms[" + std::to_string(ti) + "]";
                const auto& tj = terms[ti];
                ConstraintTerm t;
                t.agent = as_int(require(tj, tw, "agent"), tw + ".agent");
                t.a = vec_from_json(require(tj, tw, "a"), tw + ".a");
                if (auto oit = tj.find("offset"); oit != tj.end())
                    t.offset = as_number(*oit, tw + ".offset");
                if (auto mit = tj.find("M"); mit != tj.end() && !mit->is_null())
                    t.M = mat_from_json(*mit, tw + ".M");
                c.terms.push_back(std::move(t));
            }
            sc.constraints.push_back(std::move(c));
        }
    }

    if (auto it = j.find("initial_state"); it != j.end() && !it->is_null()) {
        if (!it->is_array()) throw key_error("scenario.initial_state", "expected an array");
        if (static_cast<int>(it->size()) != sc.agent_count())
            throw key_error("scenario.initial_state", "expected one state per agent");
        for (std::size_t i = 0; i < it->size(); ++i)
            out.initial_state[static_cast<int>(i)] = vec_from_json(
                (*it)[i], "scenario.initial_state[" + std::to_string(i) + "]");
    }
    return out;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError(origin + ": not valid JSON");
    return j;
}

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path + " for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_json_text(buf.str(), path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path);
}

inline ScenarioFile load_scenario(const std::string& path) {
    try {
        return scenario_from_json(read_json_file(path));
    } catch (const ConfigError& e) {
        // Parse errors already name the file; schema errors name a key path.
        if (std::string(e.what()).rfind(path, 0) == 0) throw;
        throw ConfigError(path + ": " + e.what());
    }
}

inline void save_scenario(const std::string& path, const Scenario& sc,
                          const std::map<int, Vec>& initial_state = {}) {
    write_text_file(path, scenario_to_json(sc, initial_state).dump(2) + "\n");
}

}  // namespace dmpc
