#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pmlgamm/errors.hpp"
#include "pmlgamm/family.hpp"

namespace pmlgamm {

struct Row {
  double y = 0.0;
  std::vector<double> x;
};

struct Group {
  long group_id = 0;
  std::vector<Row> rows;
};

/// Grouped responses. Validated on construction: nonempty groups, unique ids,
/// a common covariate dimension.
class Dataset {
 public:
  Dataset() = default;

  explicit Dataset(std::vector<Group> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) throw ConfigError("dataset has no groups");
    p_ = groups_.front().rows.empty() ? 0 : groups_.front().rows.front().x.size();
    std::set<long> ids;
    for (const auto& g : groups_) {
      if (g.rows.empty()) {
        throw ConfigError("group " + std::to_string(g.group_id) + " has no rows");
      }
      if (!ids.insert(g.group_id).second) {
        throw ConfigError("duplicate group id " + std::to_string(g.group_id));
      }
      for (const auto& r : g.rows) {
        if (r.x.size() != p_) throw ConfigError("rows have inconsistent covariate dimension");
      }
      n_ += g.rows.size();
    }
    if (p_ == 0) throw ConfigError("dataset has no covariates");
  }

  const std::vector<Group>& groups() const { return groups_; }
  std::size_t num_groups() const { return groups_.size(); }
  std::size_t num_rows() const { return n_; }
  std::size_t num_covariates() const { return p_; }

  /// All values of covariate s (0-based), in group-major order.
  std::vector<double> covariate(std::size_t s) const {
    std::vector<double> out;
    out.reserve(n_);
    for (const auto& g : groups_)
      for (const auto& r : g.rows) out.push_back(r.x.at(s));
    return out;
  }

  void validate_responses(Family f) const {
    for (const auto& g : groups_)
      for (const auto& r : g.rows) {
        if (!valid_response(f, r.y)) {
          throw DomainError("group " + std::to_string(g.group_id) + ": response " +
                            std::to_string(r.y) + " invalid for family " +
                            std::string(family_name(f)));
        }
      }
  }

 private:
  std::vector<Group> groups_;
  std::size_t n_ = 0;
  std::size_t p_ = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is available in libstdc++ >= 11
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
  }
}

}  // namespace detail

/// Reads `group,y,x1,...,xp`. Rows of a group need not be contiguous; groups
/// keep the order of first appearance. Parse errors name the line number.
inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ConfigError("dataset CSV is empty");
  ++lineno;
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "group" || header[1] != "y") {
    throw ConfigError("line 1: expected header group,y,x1,...,xp");
  }
  const std::size_t p = header.size() - 2;

  std::vector<Group> groups;
  std::vector<std::pair<long, std::size_t>> index;  // id -> position, sorted
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != p + 2) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected " +
                        std::to_string(p + 2) + " fields, found " +
                        std::to_string(fields.size()));
    }
    long id = 0;
    if (!detail::parse_number(fields[0], id)) {
      throw ConfigError("line " + std::to_string(lineno) + ": group '" + fields[0] +
                        "' is not an integer");
    }
    Row row;
    if (!detail::parse_number(fields[1], row.y)) {
      throw ConfigError("line " + std::to_string(lineno) + ": cannot parse y '" + fields[1] +
                        "'");
    }
    row.x.resize(p);
    for (std::size_t s = 0; s < p; ++s) {
      if (!detail::parse_number(fields[s + 2], row.x[s])) {
        throw ConfigError("line " + std::to_string(lineno) + ": cannot parse " + header[s + 2] +
                          " '" + fields[s + 2] + "'");
      }
    }
    auto it = std::lower_bound(index.begin(), index.end(), std::make_pair(id, std::size_t{0}),
                               [](const auto& a, const auto& b) { return a.first < b.first; });
    if (it == index.end() || it->first != id) {
      it = index.insert(it, {id, groups.size()});
      groups.push_back(Group{id, {}});
    }
    groups[it->second].rows.push_back(std::move(row));
  }
  if (groups.empty()) throw ConfigError("dataset CSV has a header but no data rows");
  return Dataset(std::move(groups));
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in);
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "group,y";
  for (std::size_t s = 0; s < data.num_covariates(); ++s) out << ",x" << (s + 1);
  out << '\n';
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& g : data.groups())
    for (const auto& r : g.rows) {
      out << g.group_id << ',' << r.y;
      for (double v : r.x) out << ',' << v;
      out << '\n';
    }
}

}  // namespace pmlgamm
