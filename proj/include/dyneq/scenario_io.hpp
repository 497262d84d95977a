#pragma once

// Scenario files (JSON, format tag "dyneq-scenario/1") and CSV result tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyneq/arc_models.hpp"
#include "dyneq/equilibrium.hpp"
#include "dyneq/errors.hpp"
#include "dyneq/flow_measures.hpp"
#include "dyneq/network_loading.hpp"

namespace dyneq {

inline constexpr const char* kScenarioFormat = "dyneq-scenario/1";

struct Scenario {
    Network network;
    DemandTable demand;
    std::vector<UserClass> classes;
    Horizon horizon;
};

/// Decimal text with 12 significant digits.
inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

namespace detail {

using nlohmann::json;

inline double rounded(double v) { return std::stod(format_number(v)); }

inline std::size_t line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

/// Typed field access that reports the JSON path on failure.
class Reader {
public:
    Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {}

    const json& raw() const { return node_; }
    const std::string& path() const { return path_; }
    bool has(const char* key) const { return node_.is_object() && node_.contains(key); }

    Reader at(const char* key) const {
        if (!node_.is_object()) throw ParseError("expected an object", 0, path_);
        auto it = node_.find(key);
        if (it == node_.end()) throw ParseError("missing field", 0, child(key));
        return {*it, child(key)};
    }

    std::vector<Reader> items() const {
        if (!node_.is_array()) throw ParseError("expected an array", 0, path_);
        std::vector<Reader> out;
        for (std::size_t i = 0; i < node_.size(); ++i) out.emplace_back(node_[i], path_ + "[" + std::to_string(i) + "]");
        return out;
    }

    double number() const {
        if (!node_.is_number()) throw ParseError("expected a number", 0, path_);
        double v = node_.get<double>();
        if (!std::isfinite(v)) throw ParseError("expected a finite number", 0, path_);
        return v;
    }

    std::string text() const {
        if (!node_.is_string()) throw ParseError("expected a string", 0, path_);
        return node_.get<std::string>();
    }

    double number_or(const char* key, double fallback) const { return has(key) ? at(key).number() : fallback; }

private:
    std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& node_;
    std::string path_;
};

inline CumulativeFlow read_segments(const Reader& r, Horizon horizon, const std::string& what) {
    std::vector<RateSegment> segments;
    for (const Reader& s : r.items()) {
        RateSegment seg{s.at("from").number(), s.at("to").number(), s.at("rate").number()};
        if (seg.rate < 0.0) throw ValidationError(what + ": negative rate at " + s.path());
        if (seg.from < 0.0 || seg.to > horizon.end + kMergeTolerance)
            throw ValidationError(what + ": rate segment outside the horizon at " + s.path());
        segments.push_back(seg);
    }
    return CumulativeFlow::piecewise_constant(segments);
}

inline json write_segments(const CumulativeFlow& f) {
    json out = json::array();
    auto k = f.knots();
    for (std::size_t i = 0; i + 1 < k.size(); ++i)
        if (k[i].rate > 0.0)
            out.push_back({{"from", rounded(k[i].time)}, {"to", rounded(k[i + 1].time)}, {"rate", rounded(k[i].rate)}});
    return out;
}

inline ArcModelPtr read_model(const Reader& m) {
    const std::string kind = m.at("kind").text();
    try {
        if (kind == "constant") return std::make_shared<ConstantArc>(m.at("free_flow_time").number());
        if (kind == "bottleneck")
            return std::make_shared<BottleneckArc>(m.at("free_flow_time").number(), m.at("capacity").number());
        if (kind == "arc_performance") {
            std::vector<DelayFunction::Point> points;
            for (const Reader& p : m.at("delay").items()) {
                auto pair = p.items();
                if (pair.size() != 2) throw ParseError("expected [volume, time]", 0, p.path());
                points.push_back({pair[0].number(), pair[1].number()});
            }
            return std::make_shared<ArcPerformanceArc>(DelayFunction(std::move(points)));
        }
    } catch (const ModelParameterError& e) {
        throw ValidationError(m.path() + ": " + e.what());
    }
    throw ParseError("unknown arc model '" + kind + "'", 0, m.path() + ".kind");
}

inline json write_model(const ArcModel& model) {
    if (auto* c = dynamic_cast<const ConstantArc*>(&model))
        return {{"kind", "constant"}, {"free_flow_time", rounded(c->free_flow_time())}};
    if (auto* b = dynamic_cast<const BottleneckArc*>(&model))
        return {{"kind", "bottleneck"},
                {"free_flow_time", rounded(b->free_flow_time())},
                {"capacity", rounded(b->capacity())}};
    if (auto* p = dynamic_cast<const ArcPerformanceArc*>(&model)) {
        json delay = json::array();
        for (const auto& pt : p->delay().points()) delay.push_back({rounded(pt.volume), rounded(pt.time)});
        return {{"kind", "arc_performance"}, {"delay", delay}};
    }
    throw ValidationError("arc model '" + std::string(model.kind()) + "' has no scenario encoding");
}

inline Scenario scenario_from_json(const json& doc) {
    Reader root(doc, "");
    if (root.at("format").text() != kScenarioFormat)
        throw ParseError("unsupported format tag (expected " + std::string(kScenarioFormat) + ")", 0, "format");
    Scenario sc;
    const double end = root.at("horizon").number();
    if (!(end > 0.0)) throw ValidationError("horizon must be positive");
    sc.horizon = Horizon(end);
    sc.demand.horizon = sc.horizon;

    Reader net = root.at("network");
    for (const Reader& n : net.at("nodes").items()) sc.network.add_node(n.text());
    for (const Reader& a : net.at("arcs").items())
        sc.network.add_arc(a.at("id").text(), a.at("tail").text(), a.at("head").text(), read_model(a.at("model")));
    for (const Reader& r : net.at("routes").items()) {
        std::vector<std::string> arcs;
        for (const Reader& id : r.at("arcs").items()) arcs.push_back(id.text());
        sc.network.add_route(r.at("id").text(), arcs);
    }

    if (root.has("demand")) {
        for (const Reader& row : root.at("demand").items()) {
            OdDemand od{row.at("origin").text(), row.at("destination").text(), {}};
            const std::string label = "demand " + od.origin + "->" + od.destination;
            od.departures = read_segments(row.at("segments"), sc.horizon, label);
            if (od.departures.total() > 0.0 && sc.network.routes_between(od.origin, od.destination).empty())
                throw ValidationError(label + ": no route serves this od pair");
            sc.demand.ods.push_back(std::move(od));
        }
    }

    if (root.has("classes")) {
        for (const Reader& c : root.at("classes").items()) {
            UserClass uc;
            uc.id = c.at("id").text();
            uc.origin = c.at("origin").text();
            uc.destination = c.at("destination").text();
            const std::string mode = c.at("mode").text();
            if (mode == "departure_choice")
                uc.mode = ChoiceMode::departure_choice;
            else if (mode == "fixed_departure")
                uc.mode = ChoiceMode::fixed_departure;
            else
                throw ParseError("unknown choice mode '" + mode + "'", 0, c.path() + ".mode");
            uc.utility = {c.number_or("alpha", 1.0), c.number_or("beta", 0.0), c.number_or("gamma", 0.0),
                          c.number_or("preferred_arrival", 0.0)};
            if (uc.mode == ChoiceMode::departure_choice) {
                uc.mass = c.at("mass").number();
                if (!(uc.mass > 0.0)) throw ValidationError("class '" + uc.id + "': mass must be positive");
            } else {
                uc.departures = read_segments(c.at("segments"), sc.horizon, "class '" + uc.id + "'");
                uc.mass = uc.departures.total();
            }
            if (sc.network.routes_between(uc.origin, uc.destination).empty())
                throw ValidationError("class '" + uc.id + "': no route serves this od pair");
            sc.classes.push_back(std::move(uc));
        }
    }
    return sc;
}

}  // namespace detail

inline Scenario parse_scenario_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(e.what(), detail::line_of(text, e.byte == 0 ? 0 : e.byte - 1), "");
    }
    return detail::scenario_from_json(doc);
}

inline Scenario parse_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file '" + path + "'", 0, "");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str());
}

inline std::string write_scenario(const Scenario& sc) {
    using nlohmann::json;
    using detail::rounded;
    json doc;
    doc["format"] = kScenarioFormat;
    doc["horizon"] = rounded(sc.horizon.end);
    json nodes = json::array(), arcs = json::array(), routes = json::array();
    for (const auto& n : sc.network.nodes()) nodes.push_back(n);
    for (const auto& a : sc.network.arcs())
        arcs.push_back({{"id", a.id}, {"tail", a.tail}, {"head", a.head}, {"model", detail::write_model(*a.model)}});
    for (const auto& r : sc.network.routes()) {
        json ids = json::array();
        for (std::size_t a : r.arcs) ids.push_back(sc.network.arc(a).id);
        routes.push_back({{"id", r.id}, {"arcs", ids}});
    }
    doc["network"] = {{"nodes", nodes}, {"arcs", arcs}, {"routes", routes}};

    json demand = json::array();
    for (const auto& od : sc.demand.ods)
        demand.push_back({{"origin", od.origin},
                          {"destination", od.destination},
                          {"segments", detail::write_segments(od.departures)}});
    doc["demand"] = demand;

    if (!sc.classes.empty()) {
        json classes = json::array();
        for (const auto& uc : sc.classes) {
            json c = {{"id", uc.id},
                      {"origin", uc.origin},
                      {"destination", uc.destination},
                      {"mode", uc.mode == ChoiceMode::departure_choice ? "departure_choice" : "fixed_departure"},
                      {"alpha", rounded(uc.utility.alpha)},
                      {"beta", rounded(uc.utility.beta)},
                      {"gamma", rounded(uc.utility.gamma)},
                      {"preferred_arrival", rounded(uc.utility.preferred_arrival)}};
            if (uc.mode == ChoiceMode::departure_choice)
                c["mass"] = rounded(uc.mass);
            else
                c["segments"] = detail::write_segments(uc.departures);
            classes.push_back(c);
        }
        doc["classes"] = classes;
    }
    return doc.dump(2) + "\n";
}

// ---- CSV tables ---------------------------------------------------------

/// Comma-separated table with a header row; numbers use 12 significant digits.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    struct Row {
        std::string id;
        std::vector<std::string> cells;
        double h = 0.0;
    };

    void add(std::string id, double h, std::vector<std::string> cells) { rows_.push_back({std::move(id), std::move(cells), h}); }

    /// Stable sort by (id, h).
    void sort() {
        std::stable_sort(rows_.begin(), rows_.end(),
                         [](const Row& a, const Row& b) { return a.id != b.id ? a.id < b.id : a.h < b.h; });
    }

    const std::vector<Row>& rows() const { return rows_; }

    std::string str() const {
        std::string out;
        for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + header_[i];
        out += "\n";
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.cells.size(); ++i) out += (i ? "," : "") + r.cells[i];
            out += "\n";
        }
        return out;
    }

private:
    std::vector<std::string> header_;
    std::vector<Row> rows_;
};

inline CsvTable route_time_table(const Network& net, const TravelTimePattern& times) {
    CsvTable t({"route", "h", "travel_time"});
    for (std::size_t r = 0; r < net.routes().size(); ++r) {
        const auto& curve = times.routes[r];
        for (std::size_t i = 0; i < curve.departures.size(); ++i)
            t.add(net.route(r).id, curve.departures[i],
                  {net.route(r).id, format_number(curve.departures[i]), format_number(curve.times[i])});
    }
    t.sort();
    return t;
}

/// Cumulative entries and exits of every arc at each breakpoint of either curve.
inline CsvTable arc_flow_table(const Network& net, const ArcFlowBundle& b) {
    CsvTable t({"arc", "h", "cumulative_in", "cumulative_out"});
    for (std::size_t a = 0; a < net.arcs().size(); ++a) {
        const CumulativeFlow& in = b.total[a];
        const CumulativeFlow out = pushforward(in, b.exit_curves[a]);
        std::vector<double> hs{0.0};
        for (const auto& k : in.knots()) hs.push_back(k.time);
        for (const auto& k : out.knots()) hs.push_back(k.time);
        std::sort(hs.begin(), hs.end());
        hs.erase(std::unique(hs.begin(), hs.end()), hs.end());
        for (double h : hs)
            t.add(net.arc(a).id, h, {net.arc(a).id, format_number(h), format_number(in.at(h)), format_number(out.at(h))});
    }
    t.sort();
    return t;
}

/// Knots of every route inflow curve, enough to rebuild the pattern exactly.
inline CsvTable route_flow_table(const Network& net, const RouteFlowPattern& x) {
    CsvTable t({"route", "h", "cumulative_left", "cumulative"});
    for (std::size_t r = 0; r < net.routes().size(); ++r)
        for (const auto& k : x.flows[r].knots())
            t.add(net.route(r).id, k.time,
                  {net.route(r).id, format_number(k.time), format_number(k.left), format_number(k.value)});
    t.sort();
    return t;
}

inline CsvTable gap_trace_table(const EquilibriumState& s) {
    CsvTable t({"iteration", "gap"});
    for (auto [it, gap] : s.gap_trace) t.add("", static_cast<double>(it), {std::to_string(it), format_number(gap)});
    return t;
}

inline CsvTable conformance_table(const std::vector<std::pair<std::string, ConformanceReport>>& reports) {
    CsvTable t({"arc", "model", "check", "passed", "worst", "detail"});
    for (const auto& [arc, rep] : reports)
        for (std::size_t i = 0; i < rep.checks.size(); ++i) {
            const auto& c = rep.checks[i];
            std::string detail = c.detail;
            std::replace(detail.begin(), detail.end(), ',', ';');
            t.add(arc, static_cast<double>(i),
                  {arc, rep.model, c.name, c.passed ? "true" : "false", format_number(c.worst), detail});
        }
    t.sort();
    return t;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace detail

/// Rebuilds a route flow pattern from a route-flow table written by route_flow_table.
inline RouteFlowPattern read_route_flows(const Network& net, std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line.rfind("route,h,cumulative_left,cumulative", 0) != 0)
        throw ParseError("expected header route,h,cumulative_left,cumulative", 1, "");
    std::map<std::size_t, std::vector<CumulativeFlow::Knot>> knots;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != 4) throw ParseError("expected 4 columns", line_no, "");
        const std::size_t r = net.route_index(cells[0]);
        CumulativeFlow::Knot k;
        try {
            k.time = std::stod(cells[1]);
            k.left = std::stod(cells[2]);
            k.value = std::stod(cells[3]);
        } catch (const std::exception&) {
            throw ParseError("expected numbers", line_no, "");
        }
        knots[r].push_back(k);
    }
    RouteFlowPattern x;
    x.flows.resize(net.routes().size());
    for (auto& [r, ks] : knots) {
        for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
            double dt = ks[i + 1].time - ks[i].time;
            ks[i].rate = dt > 0.0 ? std::max(0.0, (ks[i + 1].left - ks[i].value) / dt) : 0.0;
        }
        x.flows[r] = CumulativeFlow::from_knots(std::move(ks));
    }
    return x;
}

}  // namespace dyneq
