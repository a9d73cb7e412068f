#ifndef SAFRO_IO_HPP_
#define SAFRO_IO_HPP_

// Episode JSONL, binary tensor checkpoints and atomic file writes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "safro/core.hpp"

namespace safro {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/*
 * JSON mapping for core types
 */

inline void to_json(Json& j, const ScoreVector& s) {
  j = std::vector<double>(s.values().begin(), s.values().end());
}
inline void from_json(const Json& j, ScoreVector& s) { s = ScoreVector(j.get<std::vector<double>>()); }

inline void to_json(Json& j, const FusionAction& a) {
  j = Json{{"bin_indices", a.bin_indices}, {"weights", a.weights}};
}
inline void from_json(const Json& j, FusionAction& a) {
  j.at("bin_indices").get_to(a.bin_indices);
  j.at("weights").get_to(a.weights);
}

inline void to_json(Json& j, const Candidate& c) {
  j = Json{{"scores", c.scores}, {"relevance", c.relevance}, {"quality", c.quality}};
}
inline void from_json(const Json& j, Candidate& c) {
  j.at("scores").get_to(c.scores);
  j.at("relevance").get_to(c.relevance);
  j.at("quality").get_to(c.quality);
}

inline void to_json(Json& j, const ItemFeedback& f) {
  j = Json{{"click", f.click},
           {"long_play", f.long_play},
           {"duration", f.duration},
           {"relevance_label", f.relevance_label}};
}
inline void from_json(const Json& j, ItemFeedback& f) {
  j.at("click").get_to(f.click);
  j.at("long_play").get_to(f.long_play);
  j.at("duration").get_to(f.duration);
  j.at("relevance_label").get_to(f.relevance_label);
}

inline void to_json(Json& j, const QueryEpisode& e) {
  j = Json{{"user_id", e.user_id},
           {"query_id", e.query_id},
           {"state_features", e.state_features},
           {"candidates", e.candidates},
           {"weights", e.weights},
           {"feedback", e.feedback},
           {"reformulated", e.reformulated},
           {"session_gap", e.session_gap},
           {"retained", e.retained},
           {"user_gap_baseline", e.user_gap_baseline},
           {"future_clicks", e.future_clicks},
           {"future_long_plays", e.future_long_plays},
           {"retention_probability", e.retention_probability}};
}
inline void from_json(const Json& j, QueryEpisode& e) {
  j.at("user_id").get_to(e.user_id);
  j.at("query_id").get_to(e.query_id);
  j.at("state_features").get_to(e.state_features);
  j.at("candidates").get_to(e.candidates);
  j.at("weights").get_to(e.weights);
  j.at("feedback").get_to(e.feedback);
  j.at("reformulated").get_to(e.reformulated);
  j.at("session_gap").get_to(e.session_gap);
  j.at("retained").get_to(e.retained);
  j.at("user_gap_baseline").get_to(e.user_gap_baseline);
  e.future_clicks = j.value("future_clicks", 0);
  e.future_long_plays = j.value("future_long_plays", 0);
  e.retention_probability = j.value("retention_probability", 0.0);
  e.validate();
}

/*
 * Files
 */

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents,
                              bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string episodes_to_jsonl(const std::vector<QueryEpisode>& episodes) {
  std::string out;
  for (const auto& e : episodes) {
    out += Json(e).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<QueryEpisode> episodes_from_jsonl(std::string_view text) {
  std::vector<QueryEpisode> episodes;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const auto line = text.substr(start, end - start);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        episodes.push_back(Json::parse(line).get<QueryEpisode>());
      } catch (const std::exception& ex) {
        throw Error("episode JSONL line " + std::to_string(line_no) + ": " + ex.what());
      }
    }
    start = end + 1;
  }
  return episodes;
}

inline void save_episodes(const std::filesystem::path& path, const std::vector<QueryEpisode>& eps) {
  write_file_atomic(path, episodes_to_jsonl(eps));
}

inline std::vector<QueryEpisode> load_episodes(const std::filesystem::path& path) {
  return episodes_from_jsonl(read_file(path));
}

/*
 * Binary tensor checkpoints
 *
 * Layout (little-endian):
 *   int32 tensor_count
 *   tensor_count x (int32 rows, int32 cols)
 *   row-major float64 payload of every tensor, in header order
 */

struct TensorShape {
  std::int32_t rows = 0;
  std::int32_t cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const TensorShape&) const = default;
};

struct TensorFile {
  std::vector<TensorShape> shapes;
  std::vector<double> data;
};

namespace detail {

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::string_view in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("checkpoint truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::string encode_tensors(const TensorFile& file) {
  std::size_t total = 0;
  for (const auto& s : file.shapes) total += s.size();
  require_dim(file.data.size(), total, "encode_tensors payload");
  std::string out;
  out.reserve(4 + 8 * file.shapes.size() + 8 * total);
  detail::append_le<std::int32_t>(out, static_cast<std::int32_t>(file.shapes.size()));
  for (const auto& s : file.shapes) {
    detail::append_le<std::int32_t>(out, s.rows);
    detail::append_le<std::int32_t>(out, s.cols);
  }
  for (double v : file.data) detail::append_le<double>(out, v);
  return out;
}

inline TensorFile decode_tensors(std::string_view bytes) {
  TensorFile file;
  std::size_t pos = 0;
  const auto count = detail::read_le<std::int32_t>(bytes, pos);
  if (count < 0) throw Error("checkpoint: negative tensor count");
  std::size_t total = 0;
  for (std::int32_t i = 0; i < count; ++i) {
    TensorShape s;
    s.rows = detail::read_le<std::int32_t>(bytes, pos);
    s.cols = detail::read_le<std::int32_t>(bytes, pos);
    if (s.rows < 0 || s.cols < 0) throw Error("checkpoint: negative tensor shape");
    total += s.size();
    file.shapes.push_back(s);
  }
  file.data.reserve(total);
  for (std::size_t i = 0; i < total; ++i) file.data.push_back(detail::read_le<double>(bytes, pos));
  if (pos != bytes.size()) throw Error("checkpoint: trailing bytes");
  return file;
}

}  // namespace safro

#endif  // SAFRO_IO_HPP_
