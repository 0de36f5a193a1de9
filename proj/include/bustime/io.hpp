#pragma once

// CSV readers and writers for routes, GPS fixes, ground truth and
// predictions. Numbers are written in shortest round-trip form.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "bustime/evaluation.hpp"
#include "bustime/geometry.hpp"
#include "bustime/synthetic.hpp"
#include "bustime/time.hpp"

namespace bustime {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFile : IoError {
  using IoError::IoError;
};

inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError(where + ": '" + std::string(s) + "' is not a number");
  return v;
}

inline std::size_t parse_size(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError(where + ": '" + std::string(s) + "' is not a non-negative integer");
  return v;
}

/// Header-indexed comma-separated table; fields are not quoted.
class CsvTable {
 public:
  static CsvTable read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open " + path.string());
    CsvTable t;
    t.path_ = path.string();
    std::string line;
    if (!std::getline(in, line)) throw IoError(t.path_ + ": empty file");
    t.header_ = split(strip(line));
    for (std::size_t i = 0; i < t.header_.size(); ++i) t.col_[t.header_[i]] = i;
    std::size_t no = 1;
    while (std::getline(in, line)) {
      ++no;
      line = strip(line);
      if (line.empty()) continue;
      auto f = split(line);
      if (f.size() != t.header_.size())
        throw IoError(t.path_ + ":" + std::to_string(no) + ": expected " + std::to_string(t.header_.size()) +
                      " fields, got " + std::to_string(f.size()));
      t.rows_.push_back(std::move(f));
      t.line_.push_back(no);
    }
    return t;
  }

  std::size_t size() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }

  std::size_t column(const std::string& name) const {
    auto it = col_.find(name);
    if (it == col_.end()) throw IoError(path_ + ": missing column '" + name + "'");
    return it->second;
  }

  const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  std::string where(std::size_t row) const { return path_ + ":" + std::to_string(line_[row]); }

 private:
  static std::string strip(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    return s;
  }
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    out.push_back(cur);
    return out;
  }

  std::string path_;
  std::vector<std::string> header_;
  std::map<std::string, std::size_t> col_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> line_;
};

/// Writes to `path` through a temporary sibling and a rename.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path path) : path_(std::move(path)), tmp_(path_) {
    tmp_ += ".tmp";
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot write " + tmp_.string());
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (out_.is_open()) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_, ec);
    }
  }

  std::ostream& stream() { return out_; }

  void commit() {
    out_.close();
    if (!out_) throw IoError("write failed for " + tmp_.string());
    std::filesystem::rename(tmp_, path_);
  }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
};

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  AtomicFile f(path);
  f.stream() << text;
  f.commit();
}

/// route_id,seq,lat,lon (shapes and stops share the layout).
inline std::map<std::string, std::vector<GeoPoint>> read_sequences(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto cr = t.column("route_id"), cs = t.column("seq"), ca = t.column("lat"), co = t.column("lon");
  std::map<std::string, std::map<std::size_t, GeoPoint>> tmp;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto seq = parse_size(t.at(i, cs), t.where(i));
    auto [it, fresh] = tmp[t.at(i, cr)].emplace(
        seq, GeoPoint{parse_double(t.at(i, ca), t.where(i)), parse_double(t.at(i, co), t.where(i))});
    if (!fresh) throw IoError(t.where(i) + ": duplicate seq " + std::to_string(seq));
  }
  std::map<std::string, std::vector<GeoPoint>> out;
  for (auto& [route, m] : tmp)
    for (auto& [seq, p] : m) out[route].push_back(p);
  return out;
}

inline void write_sequences(std::ostream& o, const std::string& route_id, const std::vector<GeoPoint>& pts,
                            bool header) {
  if (header) o << "route_id,seq,lat,lon\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    o << route_id << ',' << i << ',' << fmt_double(pts[i].lat) << ',' << fmt_double(pts[i].lon) << '\n';
}

/// bus_id,route_id,timestamp,lat,lon
inline std::vector<GpsPoint> read_gps(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto cb = t.column("bus_id"), cr = t.column("route_id"), ct = t.column("timestamp"), ca = t.column("lat"),
             co = t.column("lon");
  std::vector<GpsPoint> out;
  out.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    Instant ts;
    try {
      ts = parse_instant(t.at(i, ct));
    } catch (const std::invalid_argument& e) {
      throw IoError(t.where(i) + ": " + e.what());
    }
    out.push_back({t.at(i, cb), t.at(i, cr), ts, parse_double(t.at(i, ca), t.where(i)),
                   parse_double(t.at(i, co), t.where(i))});
  }
  return out;
}

inline void write_gps(std::ostream& o, const std::vector<GpsPoint>& pts, bool header = true) {
  if (header) o << "bus_id,route_id,timestamp,lat,lon\n";
  for (const auto& p : pts)
    o << p.bus_id << ',' << p.route_id << ',' << format_instant(p.timestamp) << ',' << fmt_double(p.lat) << ','
      << fmt_double(p.lon) << '\n';
}

/// route_id,bus_id,departure,origin_offset_min,stop_seq,arrival_min
inline void write_truth(std::ostream& o, const std::vector<RideTruth>& truth, bool header = true) {
  if (header) o << "route_id,bus_id,departure,origin_offset_min,stop_seq,arrival_min\n";
  for (const auto& t : truth)
    for (std::size_t j = 0; j < t.stop_arrival_min.size(); ++j)
      o << t.route_id << ',' << t.bus_id << ',' << format_instant(t.departure) << ','
        << fmt_double(t.origin_offset_min) << ',' << j << ',' << fmt_double(t.stop_arrival_min[j]) << '\n';
}

inline constexpr const char* kPredictionHeader =
    "bus_id,k,target_dist_m,predicted_T_min,observed_T_min,method,ride_id,route_id";

inline void write_prediction(std::ostream& o, const PredictionRecord& r) {
  o << r.bus_id << ',' << r.k << ',' << fmt_double(r.prediction_distance) << ',' << fmt_double(r.T_hat) << ','
    << fmt_double(r.T) << ',' << r.method << ',' << r.ride_id << ',' << r.route_id << '\n';
}

inline std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
  const auto t = CsvTable::read(path);
  const auto cb = t.column("bus_id"), ck = t.column("k"), cd = t.column("target_dist_m"),
             cp = t.column("predicted_T_min"), cobs = t.column("observed_T_min"), cm = t.column("method"),
             cr = t.column("ride_id"), cro = t.column("route_id");
  std::vector<PredictionRecord> out;
  out.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    PredictionRecord r;
    r.bus_id = t.at(i, cb);
    r.k = parse_size(t.at(i, ck), t.where(i));
    r.prediction_distance = parse_double(t.at(i, cd), t.where(i));
    r.T_hat = parse_double(t.at(i, cp), t.where(i));
    r.T = parse_double(t.at(i, cobs), t.where(i));
    r.method = t.at(i, cm);
    r.ride_id = t.at(i, cr);
    r.route_id = t.at(i, cro);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace bustime
