// SPDX-License-Identifier: Apache-2.0
//
// CSV and raw-matrix loaders for the evaluation inputs: stimulus sentences,
// word-by-word reading times, and response matrices (float32 + JSON sidecar).
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conlm/binio.hpp"
#include "conlm/eval.hpp"

namespace conlm {

namespace {

// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

std::vector<std::string> load_stimuli_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw IoError("stimuli '" + path + "': empty file");
  if (split_csv_line(lines[0]).at(0) != "sentence")
    throw IoError("stimuli '" + path + "': expected header 'sentence'");
  std::vector<std::string> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    out.push_back(split_csv_line(lines[i]).at(0));
  }
  return out;
}

void save_stimuli_csv(const std::vector<std::string>& stimuli, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "sentence\n";
  for (const auto& s : stimuli) out << csv_escape(s) << "\n";
}

ReadingTimeDataset load_reading_times_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw IoError("reading times '" + path + "': empty file");
  if (lines[0].rfind("story_id,word_index,word,rt_ms", 0) != 0)
    throw IoError("reading times '" + path + "': expected header story_id,word_index,word,rt_ms");
  ReadingTimeDataset out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    if (f.size() != 4)
      throw IoError("reading times '" + path + "': line " + std::to_string(i + 1) + " has " +
                    std::to_string(f.size()) + " fields");
    ReadingTimeWord w;
    w.story_id = f[0];
    w.word_index = std::stoll(f[1]);
    w.word = f[2];
    w.rt_ms = std::stod(f[3]);
    if (!(w.rt_ms > 0.0))
      throw IoError("reading times '" + path + "': nonpositive rt_ms on line " + std::to_string(i + 1));
    out.push_back(std::move(w));
  }
  return out;
}

void save_reading_times_csv(const ReadingTimeDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "story_id,word_index,word,rt_ms\n";
  for (const auto& w : data)
    out << csv_escape(w.story_id) << ',' << w.word_index << ',' << csv_escape(w.word) << ','
        << w.rt_ms << "\n";
}

Eigen::MatrixXd load_response_matrix(const std::string& path, const std::string& sidecar_path) {
  std::ifstream sc(sidecar_path);
  if (!sc) throw IoError("cannot open sidecar '" + sidecar_path + "'");
  nlohmann::json meta = nlohmann::json::parse(sc, nullptr, true, true);
  const std::uint64_t rows = meta.at("rows").get<std::uint64_t>();
  const std::uint64_t cols = meta.at("cols").get<std::uint64_t>();
  if (meta.value("dtype", "float32") != "float32")
    throw IoError("responses '" + path + "': only float32 supported");
  if (meta.value("layout", "row_major") != "row_major")
    throw IoError("responses '" + path + "': only row_major supported");

  BinReader r(path);
  std::vector<float> buf(rows * cols);
  r.bytes(buf.data(), buf.size() * sizeof(float));
  r.expect_eof();
  Eigen::MatrixXd m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) =
          static_cast<double>(buf[i * cols + j]);
  return m;
}

void save_response_matrix(const Eigen::MatrixXd& m, const std::string& path,
                          const std::string& sidecar_path) {
  BinWriter w(path);
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      buf[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  w.bytes(buf.data(), buf.size() * sizeof(float));
  w.close();

  nlohmann::json meta = {{"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float32"},
                         {"layout", "row_major"}};
  std::ofstream sc(sidecar_path);
  if (!sc) throw IoError("cannot open sidecar '" + sidecar_path + "' for writing");
  sc << meta.dump(2) << "\n";
}

}  // namespace conlm
