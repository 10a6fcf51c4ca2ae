#include "b3it/persistence.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

namespace b3it::persistence {

using nlohmann::json;

namespace {

std::int64_t to_ms(Timestamp t) { return t.time_since_epoch().count(); }
Timestamp from_ms(std::int64_t ms) { return Timestamp(std::chrono::milliseconds(ms)); }

void expect_schema(const json& j, const char* schema) {
  if (!j.is_object() || j.value("schema", std::string{}) != schema) {
    throw FormatError(std::string("expected a ") + schema + " record");
  }
}

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const bool terminated = !in.eof();
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      if (!terminated) return;  // partial trailing record from an interrupted append
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    fn(j, line_no);
  }
}

void append_line(const std::filesystem::path& path, const json& record) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  // single write of the full line keeps concurrent readers from seeing half records in practice
  const std::string line = record.dump() + '\n';
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

json to_json(const EmpiricalDistribution& dist) {
  json counts = json::object();
  for (const auto& [token, c] : dist.counts()) counts[token] = c;
  return {{"counts", counts}, {"total", dist.total()}};
}

EmpiricalDistribution distribution_from_json(const json& j) {
  EmpiricalDistribution::CountMap counts;
  for (const auto& [token, c] : j.at("counts").items()) counts[token] = c.get<std::uint64_t>();
  auto dist = EmpiricalDistribution::from_counts(counts);
  if (j.contains("total") && j["total"].get<std::uint64_t>() != dist.total()) {
    throw FormatError("distribution total does not match its counts");
  }
  return dist;
}

json to_json(const BorderInput& bi) {
  return {{"schema", kBorderInputSchema},
          {"prompt", bi.prompt},
          {"discovery_support", bi.discovery_support},
          {"discovery_samples", bi.discovery_samples},
          {"discovered_at_ms", to_ms(bi.discovered_at)},
          {"temperature", bi.temperature_used}};
}

BorderInput border_input_from_json(const json& j) {
  expect_schema(j, kBorderInputSchema);
  BorderInput bi;
  bi.prompt = j.at("prompt").get<std::string>();
  bi.discovery_support = j.at("discovery_support").get<std::set<Token>>();
  bi.discovery_samples = j.at("discovery_samples").get<int>();
  bi.discovered_at = from_ms(j.at("discovered_at_ms").get<std::int64_t>());
  bi.temperature_used = j.at("temperature").get<double>();
  if (bi.discovery_support.size() < 2) throw FormatError("border input with fewer than 2 discovery tokens");
  return bi;
}

json to_json(const ReferenceRecord& r) {
  json bi = to_json(r.border_input);
  bi.erase("schema");
  json j = {{"schema", kReferenceSchema},
            {"border_input", bi},
            {"reference", to_json(r.reference)},
            {"endpoint", r.endpoint_fingerprint},
            {"n1", r.requested_samples}};
  if (!r.failure.empty()) j["failure"] = r.failure;
  return j;
}

ReferenceRecord reference_from_json(const json& j) {
  expect_schema(j, kReferenceSchema);
  ReferenceRecord r;
  json bi = j.at("border_input");
  bi["schema"] = kBorderInputSchema;
  r.border_input = border_input_from_json(bi);
  r.reference = j.at("reference").at("counts").empty() ? EmpiricalDistribution{}
                                                        : distribution_from_json(j.at("reference"));
  r.endpoint_fingerprint = j.at("endpoint").get<std::string>();
  r.requested_samples = j.at("n1").get<std::uint64_t>();
  r.failure = j.value("failure", std::string{});
  return r;
}

json to_json(const DetectionOutcome& o) {
  json per = json::array();
  for (const auto& p : o.per_prompt) {
    per.push_back({{"prompt", p.prompt}, {"tv", p.tv}, {"mismatch", p.mismatch}, {"detection", to_json(p.detection)}});
  }
  json failed = json::array();
  for (const auto& f : o.failed_prompts) failed.push_back({{"prompt", f.prompt}, {"reason", f.reason}});
  return {{"schema", kOutcomeSchema},
          {"timestamp_ms", to_ms(o.timestamp)},
          {"n2", o.n2},
          {"aggregate_tv", o.aggregate_tv},
          {"change_detected", o.binary_decision},
          {"per_prompt", per},
          {"failed_prompts", failed},
          {"excluded_incomplete", o.excluded_incomplete}};
}

json round_to_json(const std::string& fingerprint, const MonitorPoint& p) {
  return {{"schema", kRoundSchema},
          {"endpoint", fingerprint},
          {"timestamp_ms", to_ms(p.timestamp)},
          {"aggregate_tv", p.aggregate_tv},
          {"change_detected", p.binary_decision}};
}

json event_to_json(const std::string& fingerprint, const ChangeEvent& e) {
  return {{"schema", kEventSchema},   {"endpoint", fingerprint},   {"index", e.index},
          {"start_ms", to_ms(e.start)}, {"end_ms", to_ms(e.end)}, {"pre_mean", e.pre_mean},
          {"post_mean", e.post_mean}};
}

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot replace " + path.string() + ": " + ec.message());
  }
}

void write_border_inputs(const std::filesystem::path& path, const std::vector<BorderInput>& bis) {
  std::string out;
  for (const auto& bi : bis) out += to_json(bi).dump() + '\n';
  atomic_write(path, out);
}

std::vector<BorderInput> read_border_inputs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<BorderInput> out;
  for_each_line(in, [&](const json& j, std::size_t) { out.push_back(border_input_from_json(j)); });
  return out;
}

void write_references(const std::filesystem::path& path, const std::vector<ReferenceRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + '\n';
  atomic_write(path, out);
}

std::vector<ReferenceRecord> read_references(std::istream& in) {
  std::vector<ReferenceRecord> out;
  for_each_line(in, [&](const json& j, std::size_t) { out.push_back(reference_from_json(j)); });
  return out;
}

std::vector<ReferenceRecord> read_references(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_references(in);
}

void append_round(const std::filesystem::path& path, const std::string& fingerprint, const MonitorPoint& point) {
  append_line(path, round_to_json(fingerprint, point));
}

void append_event(const std::filesystem::path& path, const std::string& fingerprint, const ChangeEvent& event) {
  append_line(path, event_to_json(fingerprint, event));
}

MonitorHistory read_history(std::istream& in) {
  MonitorHistory h;
  for_each_line(in, [&](const json& j, std::size_t line_no) {
    const std::string schema = j.value("schema", std::string{});
    const std::string endpoint = j.value("endpoint", std::string{});
    if (h.endpoint_fingerprint.empty()) {
      h.endpoint_fingerprint = endpoint;
    } else if (endpoint != h.endpoint_fingerprint) {
      throw FormatError("line " + std::to_string(line_no) + ": history mixes endpoints");
    }
    if (schema == kRoundSchema) {
      h.append({from_ms(j.at("timestamp_ms").get<std::int64_t>()), j.at("aggregate_tv").get<double>(),
                j.value("change_detected", false)});
    } else if (schema == kEventSchema) {
      h.change_events.push_back({j.at("index").get<std::size_t>(), from_ms(j.at("start_ms").get<std::int64_t>()),
                                 from_ms(j.at("end_ms").get<std::int64_t>()), j.at("pre_mean").get<double>(),
                                 j.at("post_mean").get<double>()});
    } else {
      throw FormatError("line " + std::to_string(line_no) + ": unknown schema '" + schema + "'");
    }
  });
  return h;
}

MonitorHistory read_history(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_history(in);
}

}  // namespace b3it::persistence
