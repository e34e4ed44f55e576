#pragma once

// Deep-mutational-scanning datasets: variants in substitution notation
// ("A123C", colon-separated for multi-mutants, 1-based positions on disk),
// CSV reading/writing, and the small JSON descriptor naming the wild type.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rdistill/binary_io.hpp"
#include "rdistill/error.hpp"

namespace rdistill {

struct Mutation {
  long position = 0;  ///< 0-based residue index
  char wt_aa = 'A';
  char mut_aa = 'A';
  friend bool operator==(const Mutation&, const Mutation&) = default;
};

struct Variant {
  std::vector<Mutation> mutations;
  double score = 0.0;
  std::string mut_seq_id;

  std::size_t mutation_count() const { return mutations.size(); }

  std::vector<long> positions() const {
    std::vector<long> p;
    for (const auto& m : mutations) p.push_back(m.position);
    return p;
  }
};

struct DmsDataset {
  std::string name;
  std::string wt_seq_id;
  std::vector<Variant> variants;

  std::size_t count_with(std::size_t mutations) const {
    return static_cast<std::size_t>(std::count_if(variants.begin(), variants.end(), [&](const Variant& v) {
      return v.mutation_count() == mutations;
    }));
  }
};

/// Formats mutations as "A124C:G46T" (positions printed 1-based).
inline std::string format_mutations(const std::vector<Mutation>& muts) {
  std::string s;
  for (std::size_t i = 0; i < muts.size(); ++i) {
    if (i) s += ':';
    s += muts[i].wt_aa;
    s += std::to_string(muts[i].position + 1);
    s += muts[i].mut_aa;
  }
  return s;
}

inline std::vector<Mutation> parse_mutations(const std::string& text) {
  std::vector<Mutation> out;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ':')) {
    if (token.size() < 3 || !std::isalpha(static_cast<unsigned char>(token.front())) ||
        !std::isalpha(static_cast<unsigned char>(token.back())))
      throw InputError("malformed mutation token '" + token + "' in '" + text + "'");
    long pos = 0;
    const char* first = token.data() + 1;
    const char* last = token.data() + token.size() - 1;
    auto [ptr, ec] = std::from_chars(first, last, pos);
    if (ec != std::errc() || ptr != last || pos < 1)
      throw InputError("malformed mutation position in '" + token + "'");
    out.push_back({pos - 1, token.front(), token.back()});
  }
  if (out.empty()) throw InputError("variant with no mutations: '" + text + "'");
  std::set<long> seen;
  for (const auto& m : out)
    if (!seen.insert(m.position).second)
      throw InputError("variant '" + text + "' mutates position " + std::to_string(m.position + 1) + " twice");
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == '"') throw InputError("quoted CSV fields are not supported: " + line);
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace detail

/// Reads a CSV with (at least) the columns mutant, score, mut_seq_id.
inline DmsDataset read_dms_csv(const std::filesystem::path& path, std::string name, std::string wt_seq_id) {
  std::stringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty CSV");
  const auto header = detail::split_csv_line(line);
  auto column = [&](const std::string& col) {
    auto it = std::find(header.begin(), header.end(), col);
    if (it == header.end()) throw InputError(path.string() + ": missing column '" + col + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_mut = column("mutant"), c_score = column("score"), c_id = column("mut_seq_id");
  DmsDataset ds{std::move(name), std::move(wt_seq_id), {}};
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields");
    Variant v;
    v.mutations = parse_mutations(cells[c_mut]);
    try {
      std::size_t used = 0;
      v.score = std::stod(cells[c_score], &used);
      if (used != cells[c_score].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + cells[c_score] + "'");
    }
    v.mut_seq_id = cells[c_id];
    ds.variants.push_back(std::move(v));
  }
  return ds;
}

inline void write_dms_csv(const DmsDataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "mutant,score,mut_seq_id\n";
  for (const auto& v : ds.variants) out << format_mutations(v.mutations) << ',' << v.score << ',' << v.mut_seq_id << '\n';
  detail::write_text(path, out.str());
}

/// Dataset descriptor: {"name", "wt_seq_id", "csv"} with csv relative to the
/// descriptor's directory.
/// A dataset directory stands for the dataset.json inside it.
inline std::filesystem::path resolve_dms_descriptor(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? path / "dataset.json" : path;
}

inline DmsDataset read_dms_descriptor(const std::filesystem::path& given) {
  const auto path = resolve_dms_descriptor(given);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_text(path));
    std::filesystem::path csv = j.at("csv").get<std::string>();
    if (csv.is_relative()) csv = path.parent_path() / csv;
    return read_dms_csv(csv, j.at("name").get<std::string>(), j.at("wt_seq_id").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path.string() + ": malformed dataset descriptor: " + e.what());
  }
}

inline void write_dms_descriptor(const DmsDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_dms_csv(ds, dir / "variants.csv");
  nlohmann::json j = {{"name", ds.name}, {"wt_seq_id", ds.wt_seq_id}, {"csv", "variants.csv"}};
  detail::write_text(dir / "dataset.json", j.dump(2) + "\n");
}

}  // namespace rdistill
