#pragma once

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "xilbench/synth/sample.hpp"

namespace xilbench {

namespace records {

inline nlohmann::json grid_to_json(const Grid2D& g) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t y = 0; y < g.height(); ++y) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t x = 0; x < g.width(); ++x) row.push_back(g.at(y, x));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Grid2D grid_from_json(const nlohmann::json& j, const std::string& id, const char* field) {
    if (!j.is_array()) throw FormatError("record '" + id + "': " + field + " must be a 2-D array");
    const std::size_t h = j.size();
    const std::size_t w = h ? j[0].size() : 0;
    std::vector<double> data;
    data.reserve(h * w);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != w)
            throw FormatError("record '" + id + "': " + field + " rows have unequal length");
        for (const auto& v : row) {
            if (!v.is_number()) throw FormatError("record '" + id + "': " + field + " contains a non-number");
            data.push_back(v.get<double>());
        }
    }
    return Grid2D(h, w, 1, std::move(data));
}

inline nlohmann::json to_json(const Sample& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["label"] = s.label;
    if (!s.image.empty()) j["image"] = grid_to_json(s.image);
    if (s.embedding) j["embedding"] = *s.embedding;
    if (s.heatmaps) {
        nlohmann::json hs = nlohmann::json::array();
        for (const auto& h : *s.heatmaps) hs.push_back(grid_to_json(h));
        j["heatmaps"] = std::move(hs);
    }
    nlohmann::json concepts = nlohmann::json::object();
    for (const auto& [name, truth] : s.concept_truth)
        if (truth != ConceptTruth::unknown) concepts[name] = truth == ConceptTruth::present ? 1 : 0;
    if (!concepts.empty()) j["concepts"] = std::move(concepts);
    return j;
}

inline Sample from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("record is not a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) throw FormatError("record without a string 'id'");
    Sample s;
    s.id = j["id"].get<std::string>();
    if (!j.contains("label") || !j["label"].is_number_integer())
        throw FormatError("record '" + s.id + "': 'label' must be an integer");
    s.label = j["label"].get<int>();
    if (j.contains("image")) s.image = grid_from_json(j["image"], s.id, "image");
    if (j.contains("embedding")) {
        if (!j["embedding"].is_array()) throw FormatError("record '" + s.id + "': 'embedding' must be an array");
        Vector e;
        for (const auto& v : j["embedding"]) {
            if (!v.is_number()) throw FormatError("record '" + s.id + "': embedding contains a non-number");
            e.push_back(v.get<double>());
        }
        s.embedding = std::move(e);
    }
    if (j.contains("heatmaps")) {
        if (!j["heatmaps"].is_array()) throw FormatError("record '" + s.id + "': 'heatmaps' must be an array");
        std::vector<Grid2D> hs;
        for (const auto& h : j["heatmaps"]) hs.push_back(grid_from_json(h, s.id, "heatmap"));
        s.heatmaps = std::move(hs);
    }
    if (j.contains("concepts")) {
        if (!j["concepts"].is_object()) throw FormatError("record '" + s.id + "': 'concepts' must be an object");
        for (const auto& [name, v] : j["concepts"].items()) {
            if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
                throw FormatError("record '" + s.id + "': concept '" + name + "' must be 0 or 1");
            s.concept_truth[name] = v.get<int>() == 1 ? ConceptTruth::present : ConceptTruth::absent;
            if (v.get<int>() == 1 && confounder_from_string(name)) s.confounder_flags.insert(name);
        }
    }
    return s;
}

}  // namespace records

/// Parses newline-delimited JSON records. Blank lines are skipped. All records
/// must agree on embedding length, heatmap count, and heatmap/image shape.
inline std::vector<Sample> parse_records(std::istream& in) {
    std::vector<Sample> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
        }
        Sample s = records::from_json(j);
        if (!ids.insert(s.id).second) throw FormatError("duplicate record id '" + s.id + "'");
        if (!out.empty()) {
            const Sample& ref = out.front();
            if (s.embedding && ref.embedding && s.embedding->size() != ref.embedding->size())
                throw FormatError("record '" + s.id + "': embedding length " + std::to_string(s.embedding->size()) +
                                  " differs from " + std::to_string(ref.embedding->size()));
            if (s.embedding.has_value() != ref.embedding.has_value())
                throw FormatError("record '" + s.id + "': embedding presence differs from the first record");
            if (s.heatmaps && ref.heatmaps && s.heatmaps->size() != ref.heatmaps->size())
                throw FormatError("record '" + s.id + "': heatmap count differs from the first record");
            if (!s.image.empty() && !ref.image.empty() &&
                (s.image.height() != ref.image.height() || s.image.width() != ref.image.width()))
                throw FormatError("record '" + s.id + "': image shape differs from the first record");
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<Sample> ingest_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open record file '" + path + "'");
    return parse_records(in);
}

inline void write_records(std::ostream& out, const std::vector<Sample>& samples) {
    for (const auto& s : samples) out << records::to_json(s).dump() << '\n';
}

inline void write_records(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write record file '" + path + "'");
    write_records(out, samples);
}

}  // namespace xilbench
