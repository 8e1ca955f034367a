#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>

#include "oxad/engine.hpp"
#include "oxad/explain.hpp"
#include "oxad/forest.hpp"
#include "oxad/ingest.hpp"

// JSON shapes of every type that crosses a file or wire boundary. Field
// names match the struct members. Config readers accept partial objects and
// fill the rest from defaults.
namespace oxad {

using nlohmann::json;

void to_json(json& j, const ForestConfig& c);
void from_json(const json& j, ForestConfig& c);
void to_json(json& j, const ExplainConfig& c);
void from_json(const json& j, ExplainConfig& c);
void to_json(json& j, const EngineConfig& c);
void from_json(const json& j, EngineConfig& c);

void to_json(json& j, const ScoredRecord& r);
void from_json(const json& j, ScoredRecord& r);
void to_json(json& j, const EventLabel& l);
void from_json(const json& j, EventLabel& l);
void to_json(json& j, const Event& e);
void from_json(const json& j, Event& e);
void to_json(json& j, const RunMark& m);
void from_json(const json& j, RunMark& m);
void to_json(json& j, const IceSnapshot& s);
void from_json(const json& j, IceSnapshot& s);
void to_json(json& j, const PdpSnapshot& s);
void from_json(const json& j, PdpSnapshot& s);
void to_json(json& j, const EngineSnapshot& s);
void from_json(const json& j, EngineSnapshot& s);

void to_json(json& j, const Regime& r);
void from_json(const json& j, Regime& r);
void to_json(json& j, const AnomalySpec& a);
void from_json(const json& j, AnomalySpec& a);
void to_json(json& j, const SyntheticSpec& s);
void from_json(const json& j, SyntheticSpec& s);
void to_json(json& j, const SourceSpec& s);
void from_json(const json& j, SourceSpec& s);

// Forest snapshot:
//   {"format": "oxad.forest/1", "config": {...}, "dimension": d,
//    "feature_mask": [bool...], "points": [{"id", "x": [...]}...],
//    "trees": [node...]}
// where node is {"depth", "count", "split": {"feature", "value"},
// "left": node, "right": node} for internal nodes and
// {"depth", "count", "members": [id...]} for leaves. Points are sorted by
// id and members keep tree order, so equal forests dump to equal bytes.
json forest_to_json(const Forest& forest);
Forest forest_from_json(const json& j);

// One ScoredRecord as compact JSON, keys in the same order json(r).dump()
// uses. Written directly because it runs once per instance per sink.
std::string record_line(const ScoredRecord& r);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

// Reads an engine configuration file ({"engine": {...}} or a bare engine
// object); a missing file section means defaults.
EngineConfig engine_config_from_file(const std::filesystem::path& path);

}  // namespace oxad
