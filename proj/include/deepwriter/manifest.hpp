#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepwriter/errors.hpp"
#include "deepwriter/random.hpp"

namespace deepwriter {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DomainError("unknown split '" + s + "' (expected train, val or test)");
}

/// One image of a dataset manifest. `split` is empty until assigned.
struct ManifestEntry {
  std::string path;
  std::string writer;
  std::optional<Split> split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Sorted distinct writer labels; a label's position is its class index.
inline std::vector<std::string> writer_labels(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> labels;
  for (const auto& e : entries) labels.push_back(e.writer);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  return labels;
}

inline std::size_t label_index(const std::vector<std::string>& labels, const std::string& writer) {
  const auto it = std::lower_bound(labels.begin(), labels.end(), writer);
  if (it == labels.end() || *it != writer) throw DomainError("unknown writer '" + writer + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

// --------------------------------------------------------------------------
// JSON-lines form: {"path": ..., "writer": ..., "split": ...} per line.

inline std::string manifest_line(const ManifestEntry& e) {
  nlohmann::ordered_json j;
  j["path"] = e.path;
  j["writer"] = e.writer;
  if (e.split) j["split"] = to_string(*e.split);
  return j.dump();
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) out << manifest_line(e) << '\n';
  if (!out) throw IoError("error writing manifest '" + path.string() + "'");
}

/// Parses a manifest. Relative image paths are resolved against the
/// manifest's directory when `resolve_paths` is set.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                                bool resolve_paths = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw IoError("malformed manifest line " + where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("path") || !j.contains("writer") ||
        !j["path"].is_string() || !j["writer"].is_string()) {
      throw IoError("manifest line " + where + " needs string fields path and writer");
    }
    ManifestEntry e{j["path"].get<std::string>(), j["writer"].get<std::string>(), {}};
    if (j.contains("split")) e.split = parse_split(j["split"].get<std::string>());
    if (resolve_paths && std::filesystem::path(e.path).is_relative()) {
      e.path = (path.parent_path() / e.path).lexically_normal().string();
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

/// Adapter for on-disk datasets laid out as <root>/<writer>/<image>.{png,pgm}.
inline std::vector<ManifestEntry> manifest_from_directory(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("'" + root.string() + "' is not a directory");
  std::vector<ManifestEntry> entries;
  for (const auto& writer_dir : fs::directory_iterator(root)) {
    if (!writer_dir.is_directory()) continue;
    for (const auto& f : fs::recursive_directory_iterator(writer_dir.path())) {
      if (!f.is_regular_file()) continue;
      auto ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext != ".png" && ext != ".pgm") continue;
      entries.push_back({fs::relative(f.path(), root).generic_string(),
                         writer_dir.path().filename().string(), {}});
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.path < b.path; });
  return entries;
}

/// Per-writer train/val/test counts for the 4:1:1 ratio with every split
/// holding at least one item.
struct SplitCounts {
  std::size_t train, val, test;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

inline SplitCounts split_counts(std::size_t n) {
  if (n < 3) throw DomainError("need at least 3 items to split, got " + std::to_string(n));
  auto train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 4.0 / 6.0));
  auto val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) / 6.0)));
  train = std::min(train, n - 2);
  std::size_t test = n - train - val;
  if (test < 1) {
    test = 1;
    train = n - val - test;
  }
  return {train, val, test};
}

/**
 * Assigns splits per writer at 4:1:1. Each writer's items are shuffled with
 * one RNG seeded by `seed`, visiting writers in sorted label order; entries
 * keep their original order in the returned manifest.
 */
inline std::vector<ManifestEntry> split_per_writer(std::vector<ManifestEntry> entries,
                                                   std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_writer;
  for (std::size_t i = 0; i < entries.size(); ++i) by_writer[entries[i].writer].push_back(i);
  for (const auto& [writer, items] : by_writer) {
    if (items.size() < 3) {
      throw DomainError("writer '" + writer + "' has " + std::to_string(items.size()) +
                        " items; at least 3 are needed for a 4:1:1 split");
    }
  }
  Rng rng(seed);
  for (auto& [writer, items] : by_writer) {
    shuffle(std::span<std::size_t>(items), rng);
    const auto c = split_counts(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) {
      entries[items[k]].split = k < c.train ? Split::train : k < c.train + c.val ? Split::val : Split::test;
    }
  }
  return entries;
}

}  // namespace deepwriter
