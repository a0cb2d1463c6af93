#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicloc/common.hpp"
#include "topicloc/linalg.hpp"

namespace topicloc {

struct Token {
  Vec2 loc;                // normalized to [0,1]^2
  std::vector<int> words;  // one word id per feature channel
  bool operator==(const Token&) const = default;
};

struct ImageRecord {
  std::string id;
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // present foreground classes, sorted unique
  bool unlabeled = false;   // SSL flag: labels are hidden from training
  std::vector<Token> tokens;
  bool operator==(const ImageRecord&) const = default;
};

struct Corpus {
  int num_classes = 0;
  std::vector<int> vocab_sizes;  // V_f per feature channel
  std::vector<ImageRecord> images;

  int num_channels() const { return static_cast<int>(vocab_sizes.size()); }
  bool operator==(const Corpus&) const = default;
};

struct SimilarityMatrix {
  int size = 0;
  std::vector<double> m;  // row major, size x size

  double at(int i, int j) const { return m[static_cast<std::size_t>(i) * size + j]; }
  double& at(int i, int j) { return m[static_cast<std::size_t>(i) * size + j]; }

  static SimilarityMatrix identity(int n) {
    SimilarityMatrix s;
    s.size = n;
    s.m.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) s.at(i, i) = 1.0;
    return s;
  }
};

// Pixel coordinates, matching annotation conventions.
struct GroundTruthBox {
  std::string image_id;
  int class_id = 0;
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

inline void validate_corpus(const Corpus& c) {
  if (c.num_classes < 1) throw ValidationError("corpus: num_classes must be >= 1");
  if (c.vocab_sizes.empty()) throw ValidationError("corpus: vocab_sizes must be non-empty");
  for (int v : c.vocab_sizes)
    if (v < 1) throw ValidationError("corpus: every vocab size must be >= 1");
  const int f = c.num_channels();
  for (const auto& im : c.images) {
    const std::string where = "image '" + im.id + "': ";
    if (im.width <= 0 || im.height <= 0)
      throw ValidationError(where + "width/height must be positive");
    std::set<int> seen;
    for (int l : im.labels) {
      if (l < 0 || l >= c.num_classes)
        throw ValidationError(where + "label " + std::to_string(l) + " out of range [0, " +
                              std::to_string(c.num_classes) + ")");
      if (!seen.insert(l).second)
        throw ValidationError(where + "duplicate label " + std::to_string(l));
    }
    if (!im.unlabeled && !im.labels.empty() && im.tokens.empty())
      throw ValidationError(where + "labelled image has no tokens");
    for (const auto& t : im.tokens) {
      if (static_cast<int>(t.words.size()) != f)
        throw ValidationError(where + "token has " + std::to_string(t.words.size()) +
                              " words, expected " + std::to_string(f));
      for (int ch = 0; ch < f; ++ch)
        if (t.words[ch] < 0 || t.words[ch] >= c.vocab_sizes[ch])
          throw ValidationError(where + "word id " + std::to_string(t.words[ch]) +
                                " out of range for channel " + std::to_string(ch));
      if (!(t.loc.x >= 0.0 && t.loc.x <= 1.0 && t.loc.y >= 0.0 && t.loc.y <= 1.0))
        throw ValidationError(where + "token location outside [0,1]^2");
    }
  }
}

// JSON-lines: header object first, one image object per following line.
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::string line;
  std::size_t line_no = 0;

  auto parse_line = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  };

  Corpus c;
  bool pixel_space = false;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const auto j = parse_line(line);
    try {
      if (!saw_header) {
        saw_header = true;
        const int version = j.at("version").get<int>();
        if (version != kFormatVersion)
          throw ValidationError(path + ": unsupported corpus version " +
                                std::to_string(version));
        c.num_classes = j.at("num_classes").get<int>();
        c.vocab_sizes = j.at("vocab_sizes").get<std::vector<int>>();
        if (j.contains("loc_space")) {
          const auto space = j.at("loc_space").get<std::string>();
          if (space == "pixel")
            pixel_space = true;
          else if (space != "normalized")
            throw ValidationError(path + ": unknown loc_space '" + space + "'");
        }
        continue;
      }
      ImageRecord im;
      im.id = j.at("id").get<std::string>();
      im.width = j.at("width").get<int>();
      im.height = j.at("height").get<int>();
      im.labels = j.at("labels").get<std::vector<int>>();
      std::sort(im.labels.begin(), im.labels.end());
      im.unlabeled = j.value("unlabeled", false);
      for (const auto& jt : j.at("tokens")) {
        Token t;
        const auto& loc = jt.at("loc");
        t.loc = {loc.at(0).get<double>(), loc.at(1).get<double>()};
        if (pixel_space) {
          t.loc.x /= im.width;
          t.loc.y /= im.height;
        }
        t.words = jt.at("w").get<std::vector<int>>();
        im.tokens.push_back(std::move(t));
      }
      c.images.push_back(std::move(im));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_header) throw ParseError(path + ": missing header line");
  validate_corpus(c);
  return c;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  nlohmann::json header{
      {"version", kFormatVersion},
      {"num_classes", c.num_classes},
      {"vocab_sizes", c.vocab_sizes},
  };
  out << header.dump() << "\n";
  for (const auto& im : c.images) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : im.tokens)
      tokens.push_back({{"loc", {t.loc.x, t.loc.y}}, {"w", t.words}});
    nlohmann::json rec{
        {"id", im.id},           {"width", im.width},       {"height", im.height},
        {"labels", im.labels},   {"unlabeled", im.unlabeled},
        {"tokens", std::move(tokens)},
    };
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("failed while writing corpus file: " + path);
}

// Headerless CSV, one row per class. Asymmetry is averaged away; anything
// beyond 1e-9 additionally gets a warning on stderr.
inline SimilarityMatrix load_similarity_matrix(const std::string& path,
                                               int expected_size = -1) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open similarity matrix: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ParseError(path + ": empty similarity matrix");
  for (const auto& r : rows)
    if (static_cast<int>(r.size()) != n)
      throw ValidationError(path + ": similarity matrix must be square");
  if (expected_size > 0 && n != expected_size)
    throw ValidationError(path + ": similarity matrix is " + std::to_string(n) + "x" +
                          std::to_string(n) + ", expected " + std::to_string(expected_size));

  SimilarityMatrix s;
  s.size = n;
  s.m.resize(static_cast<std::size_t>(n) * n);
  double worst_asym = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      worst_asym = std::max(worst_asym, std::abs(rows[i][j] - rows[j][i]));
      s.at(i, j) = 0.5 * (rows[i][j] + rows[j][i]);
    }
  if (worst_asym > 1e-9)
    std::cerr << "warning: " << path << ": similarity matrix asymmetric by " << worst_asym
              << ", symmetrized\n";
  for (int i = 0; i < n; ++i) {
    if (std::abs(s.at(i, i) - 1.0) > 1e-9)
      throw ValidationError(path + ": diagonal entry " + std::to_string(i) + " is not 1");
    for (int j = 0; j < n; ++j)
      if (s.at(i, j) < 0.0 || s.at(i, j) > 1.0)
        throw ValidationError(path + ": entry (" + std::to_string(i) + "," +
                              std::to_string(j) + ") outside [0,1]");
  }
  return s;
}

}  // namespace topicloc
