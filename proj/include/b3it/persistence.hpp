#pragma once

#include "b3it/engine.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

// Line-delimited JSON records, UTF-8, one record per line. Every line
// carries a "schema" tag of the form "b3it.<kind>/<version>".

namespace b3it::persistence {

inline constexpr const char* kBorderInputSchema = "b3it.border_input/1";
inline constexpr const char* kReferenceSchema = "b3it.reference/1";
inline constexpr const char* kRoundSchema = "b3it.round/1";
inline constexpr const char* kEventSchema = "b3it.change_event/1";
inline constexpr const char* kOutcomeSchema = "b3it.detection/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const EmpiricalDistribution& dist);
EmpiricalDistribution distribution_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BorderInput& bi);
BorderInput border_input_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ReferenceRecord& record);
ReferenceRecord reference_from_json(const nlohmann::json& j);

nlohmann::json to_json(const DetectionOutcome& outcome);

nlohmann::json round_to_json(const std::string& fingerprint, const MonitorPoint& point);
nlohmann::json event_to_json(const std::string& fingerprint, const ChangeEvent& event);

/// Writes to a sibling temporary file and renames it over `path`, so
/// readers only ever see a complete file.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

void write_border_inputs(const std::filesystem::path& path, const std::vector<BorderInput>& bis);
std::vector<BorderInput> read_border_inputs(const std::filesystem::path& path);

void write_references(const std::filesystem::path& path, const std::vector<ReferenceRecord>& records);
std::vector<ReferenceRecord> read_references(const std::filesystem::path& path);
std::vector<ReferenceRecord> read_references(std::istream& in);

/// Append-only history log: round and change-event lines.
void append_round(const std::filesystem::path& path, const std::string& fingerprint, const MonitorPoint& point);
void append_event(const std::filesystem::path& path, const std::string& fingerprint, const ChangeEvent& event);
/// Missing file reads as an empty history. A trailing partial line (writer
/// interrupted mid-append) is ignored.
MonitorHistory read_history(const std::filesystem::path& path);
MonitorHistory read_history(std::istream& in);

}  // namespace b3it::persistence
