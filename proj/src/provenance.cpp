#include "specex/error.hpp"
#include "specex/hash.hpp"
#include "specex/service.hpp"

#include <algorithm>
#include <fstream>

namespace specex {

const std::vector<std::string>& provenance_kinds() {
  static const std::vector<std::string> kinds{"ingest",         "insert",        "trigger",
                                              "sandbox_created", "sandbox_ready", "sandbox_timed_out",
                                              "accept",          "reject",        "interaction",
                                              "config"};
  return kinds;
}

nlohmann::json ProvenanceEntry::to_json() const {
  return {{"seq", seq}, {"kind", kind}, {"payload", payload}, {"digest_after", digest_after}, {"timestamp", timestamp}};
}

ProvenanceEntry ProvenanceEntry::from_json(const nlohmann::json& j) {
  ProvenanceEntry e;
  try {
    e.seq = j.at("seq").get<std::uint64_t>();
    e.kind = j.at("kind").get<std::string>();
    e.payload = j.at("payload");
    e.digest_after = j.at("digest_after").get<std::string>();
    e.timestamp = j.value("timestamp", std::int64_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw Error("malformed_log", std::string("provenance entry: ") + ex.what());
  }
  const auto& kinds = provenance_kinds();
  if (std::find(kinds.begin(), kinds.end(), e.kind) == kinds.end()) {
    throw Error("malformed_log", "unknown entry kind " + e.kind);
  }
  if (!e.payload.is_object()) throw Error("malformed_log", "entry payload must be an object");
  return e;
}

nlohmann::json normalize_entry(const ProvenanceEntry& e) {
  auto j = e.to_json();
  j.erase("timestamp");
  j["payload"].erase("timing");
  return j;
}

std::string normalized_log(const std::vector<ProvenanceEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += normalize_entry(e).dump();
    out += '\n';
  }
  return out;
}

std::vector<ProvenanceEntry> read_provenance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_path", "cannot open " + path.string());
  std::vector<ProvenanceEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      entries.push_back(ProvenanceEntry::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error&) {
      throw Error("malformed_log", "malformed log at line " + std::to_string(line_no));
    } catch (const Error& e) {
      throw Error("malformed_log", "malformed log at line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (entries.empty()) throw Error("no_entries", "no entries");
  return entries;
}

void write_provenance(const std::filesystem::path& path, const std::vector<ProvenanceEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  for (const auto& e : entries) out << e.to_json().dump() << '\n';
}

std::string corpus_digest(const Corpus& corpus) {
  std::string text;
  for (const auto& d : corpus.documents) {
    text += d.id;
    text += '\t';
    for (const auto& t : d.tokens) {
      text += t;
      text += ' ';
    }
    text += '\n';
  }
  return sha256_hex(text);
}

}  // namespace specex
