#include "zlik/text_embed.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "json.hpp"
#include "zlik/errors.hpp"
#include "zlik/hashing.hpp"

namespace zlik {

namespace {

using json = nlohmann::json;

// Normalises in double precision, then stores float.
std::vector<float> l2_normalized(const std::vector<double>& acc) {
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

}  // namespace

HashedEmbedder::HashedEmbedder(int dim) : dim_(dim) {
  if (dim < 1) throw DomainError("embedding dimension must be positive");
}

std::string HashedEmbedder::normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      if (pending_space && !out.empty()) out += ' ';
      pending_space = false;
      out += static_cast<char>(std::tolower(c));
    } else {
      pending_space = true;
    }
  }
  return out;
}

TextEmbedding HashedEmbedder::embed(std::string_view text) const {
  const std::string norm = normalize(text);
  if (norm.empty()) throw DomainError("cannot embed empty text");

  std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
  auto add = [&](std::string_view token, std::uint64_t salt) {
    const std::uint64_t h = fnv1a64(token, fnv1a64(std::string_view("\x01", 1), salt));
    const auto bucket = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim_));
    acc[bucket] += (h >> 63) ? -1.0 : 1.0;
  };
  constexpr std::uint64_t kWordSalt = 0x77;
  constexpr std::uint64_t kTrigramSalt = 0x63;

  std::size_t start = 0;
  while (start <= norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    if (end > start) add(std::string_view(norm).substr(start, end - start), kWordSalt);
    start = end + 1;
  }
  // Trigrams run across word boundaries, spaces included.
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) {
    add(std::string_view(norm).substr(i, 3), kTrigramSalt);
  }

  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  if (norm2 == 0.0) acc[0] = 1.0;  // every token cancelled out
  return {l2_normalized(acc), EmbeddingSource::kHashed};
}

TableEmbedder::TableEmbedder(int dim, std::unordered_map<std::string, std::vector<float>> table)
    : dim_(dim), table_(std::move(table)) {
  if (dim < 1) throw DomainError("embedding dimension must be positive");
  for (const auto& [text, vec] : table_) {
    if (static_cast<int>(vec.size()) != dim_) {
      throw FormatError("embedding for '" + text + "' has the wrong dimension");
    }
  }
}

TextEmbedding TableEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw DomainError("cannot embed empty text");
  auto it = table_.find(std::string(text));
  if (it == table_.end()) {
    throw LookupError("no imported embedding for text: \"" + std::string(text) + "\"");
  }
  return {it->second, EmbeddingSource::kImported};
}

std::unique_ptr<TableEmbedder> load_embedding_table(const std::filesystem::path& path,
                                                    int empty_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open embedding table " + path.string());
  std::unordered_map<std::string, std::vector<float>> table;
  int dim = -1;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string text;
    std::vector<double> values;
    try {
      const auto j = json::parse(line);
      text = j.at("text").get<std::string>();
      values = j.at("embedding").get<std::vector<double>>();
    } catch (const json::exception& e) {
      fail(std::string("malformed line: ") + e.what());
    }
    if (values.empty()) fail("empty embedding");
    if (dim < 0) dim = static_cast<int>(values.size());
    if (static_cast<int>(values.size()) != dim) {
      fail("dimension " + std::to_string(values.size()) + " differs from " + std::to_string(dim));
    }
    double norm2 = 0.0;
    for (double v : values) {
      if (!std::isfinite(v)) fail("non-finite embedding value");
      norm2 += v * v;
    }
    if (norm2 == 0.0) fail("zero embedding vector");
    if (!table.emplace(text, l2_normalized(values)).second) fail("duplicate text \"" + text + "\"");
  }
  return std::make_unique<TableEmbedder>(dim < 0 ? empty_dim : dim, std::move(table));
}

void write_embedding_table(const std::filesystem::path& path, const EmbeddingProvider& provider,
                           const std::vector<std::string>& texts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  std::unordered_set<std::string> seen;
  for (const auto& t : texts) {
    if (!seen.insert(t).second) continue;
    nlohmann::ordered_json row = {{"text", t}, {"embedding", provider.embed(t).vector}};
    out << row.dump() << '\n';
  }
}

}  // namespace zlik
