#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tgt/graph.hpp"

namespace tgt {

// Line-delimited dataset format: one graph per line as ';'-separated
// key=value fields. Integer fields are CSVs; real fields are printed with
// %.17g so a write/read round trip is value-exact. Layout:
//
//   n=5;types=1,0,2,4,3;edges=0:1:2|2:3:0;hop=0,1,...;coords=3:x,y,z,...;
//   dists=...;scalar=...;labels=0,1,...;exact=1
//
// edges entries are i:j:bond triples; coords is prefixed by the dimension.
// Optional fields (coords, dists, scalar, labels, exact) are omitted when
// absent.

namespace detail {

inline void append_int_csv(std::string& out, const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
}

inline void append_real_csv(std::string& out, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += format_real(v[i]);
    }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

inline long parse_int(const std::string& s, int line_no, const char* field) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') {
        throw IoError("dataset line " + std::to_string(line_no) + ": bad integer in field '" +
                      field + "': '" + s + "'");
    }
    return v;
}

inline double parse_real(const std::string& s, int line_no, const char* field) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw IoError("dataset line " + std::to_string(line_no) + ": bad real in field '" + field +
                      "': '" + s + "'");
    }
    return v;
}

}  // namespace detail

inline std::string serialize_graph(const GraphInstance& g) {
    std::string line = "n=" + std::to_string(g.n);
    line += ";types=";
    detail::append_int_csv(line, g.node_types);
    line += ";edges=";
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
        if (i) line += '|';
        line += std::to_string(g.edges[i].i) + ':' + std::to_string(g.edges[i].j) + ':' +
                std::to_string(g.edges[i].bond_type);
    }
    line += ";hop=";
    detail::append_int_csv(line, g.hop);
    if (g.has_coords()) {
        line += ";coords=" + std::to_string(g.coord_dim) + ':';
        detail::append_real_csv(line, g.coords);
    }
    if (g.target_distances) {
        line += ";dists=";
        detail::append_real_csv(line, *g.target_distances);
    }
    if (g.target_scalar) line += ";scalar=" + format_real(*g.target_scalar);
    if (g.edge_labels) {
        line += ";labels=";
        for (std::size_t i = 0; i < g.edge_labels->size(); ++i) {
            if (i) line += ',';
            line += char('0' + (*g.edge_labels)[i]);
        }
    }
    if (!g.labels_exact) line += ";exact=0";
    return line;
}

inline GraphInstance parse_graph(const std::string& line, int line_no) {
    GraphInstance g;
    bool saw_n = false, saw_types = false, saw_edges = false, saw_hop = false;
    for (const std::string& field : detail::split(line, ';')) {
        const std::size_t eq = field.find('=');
        if (eq == std::string::npos) {
            throw IoError("dataset line " + std::to_string(line_no) + ": malformed field '" +
                          field + "'");
        }
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "n") {
            g.n = static_cast<int>(detail::parse_int(value, line_no, "n"));
            if (g.n <= 0) throw IoError("dataset line " + std::to_string(line_no) + ": n must be positive");
            saw_n = true;
        } else if (key == "types") {
            for (const auto& tok : detail::split(value, ','))
                g.node_types.push_back(static_cast<int>(detail::parse_int(tok, line_no, "types")));
            saw_types = true;
        } else if (key == "edges") {
            if (!value.empty()) {
                for (const auto& tok : detail::split(value, '|')) {
                    const auto phase = detail::split(tok, ':');
                    if (phase.size() != 3) {
                        throw IoError("dataset line " + std::to_string(line_no) +
                                      ": edge entry must be i:j:bond, got '" + tok + "'");
                    }
                    g.edges.push_back({static_cast<int>(detail::parse_int(phase[0], line_no, "edges")),
                                       static_cast<int>(detail::parse_int(phase[1], line_no, "edges")),
                                       static_cast<int>(detail::parse_int(phase[2], line_no, "edges"))});
                }
            }
            saw_edges = true;
        } else if (key == "hop") {
            for (const auto& tok : detail::split(value, ','))
                g.hop.push_back(static_cast<int>(detail::parse_int(tok, line_no, "hop")));
            saw_hop = true;
        } else if (key == "coords") {
            const std::size_t colon = value.find(':');
            if (colon == std::string::npos) {
                throw IoError("dataset line " + std::to_string(line_no) + ": coords must be dim:csv");
            }
            g.coord_dim = static_cast<int>(detail::parse_int(value.substr(0, colon), line_no, "coords"));
            for (const auto& tok : detail::split(value.substr(colon + 1), ','))
                g.coords.push_back(detail::parse_real(tok, line_no, "coords"));
        } else if (key == "dists") {
            std::vector<double> d;
            for (const auto& tok : detail::split(value, ','))
                d.push_back(detail::parse_real(tok, line_no, "dists"));
            g.target_distances = std::move(d);
        } else if (key == "scalar") {
            g.target_scalar = detail::parse_real(value, line_no, "scalar");
        } else if (key == "labels") {
            std::vector<std::uint8_t> lab;
            for (const auto& tok : detail::split(value, ',')) {
                const long v = detail::parse_int(tok, line_no, "labels");
                if (v != 0 && v != 1) {
                    throw IoError("dataset line " + std::to_string(line_no) + ": labels must be 0/1");
                }
                lab.push_back(static_cast<std::uint8_t>(v));
            }
            g.edge_labels = std::move(lab);
        } else if (key == "exact") {
            g.labels_exact = detail::parse_int(value, line_no, "exact") != 0;
        } else {
            throw IoError("dataset line " + std::to_string(line_no) + ": unknown field '" + key + "'");
        }
    }
    if (!saw_n || !saw_types || !saw_edges || !saw_hop) {
        throw IoError("dataset line " + std::to_string(line_no) +
                      ": truncated record (need n, types, edges, hop)");
    }
    const std::size_t nn = static_cast<std::size_t>(g.n) * static_cast<std::size_t>(g.n);
    if (g.node_types.size() != static_cast<std::size_t>(g.n) || g.hop.size() != nn ||
        (g.target_distances && g.target_distances->size() != nn) ||
        (g.edge_labels && g.edge_labels->size() != nn) ||
        (g.has_coords() && g.coords.size() != static_cast<std::size_t>(g.n) * g.coord_dim)) {
        throw IoError("dataset line " + std::to_string(line_no) + ": field sizes inconsistent with n=" +
                      std::to_string(g.n));
    }
    return g;
}

inline void write_dataset(const std::string& path, const std::vector<GraphInstance>& graphs) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset file for writing: " + path);
    for (const auto& g : graphs) out << serialize_graph(g) << '\n';
    if (!out) throw IoError("write failed for dataset file: " + path);
}

inline std::vector<GraphInstance> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::vector<GraphInstance> graphs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        graphs.push_back(parse_graph(line, line_no));
    }
    return graphs;
}

}  // namespace tgt
