#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace zlik {

inline constexpr int kDefaultEmbedDim = 768;

enum class EmbeddingSource { kHashed, kImported };

// Unit-norm sentence embedding.
struct TextEmbedding {
  std::vector<float> vector;
  EmbeddingSource source = EmbeddingSource::kHashed;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual TextEmbedding embed(std::string_view text) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

// Signed feature hashing of word unigrams and character trigrams over the
// lowercased, punctuation-stripped text.
class HashedEmbedder final : public EmbeddingProvider {
 public:
  explicit HashedEmbedder(int dim = kDefaultEmbedDim);
  TextEmbedding embed(std::string_view text) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "hashed"; }

  // Lowercase, punctuation to spaces, single-space separated words.
  static std::string normalize(std::string_view text);

 private:
  int dim_;
};

// Exact-string lookup into an imported table (e.g. exported from a pretrained
// sentence model).
class TableEmbedder final : public EmbeddingProvider {
 public:
  TableEmbedder(int dim, std::unordered_map<std::string, std::vector<float>> table);
  TextEmbedding embed(std::string_view text) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "table"; }
  std::size_t size() const { return table_.size(); }

 private:
  int dim_;
  std::unordered_map<std::string, std::vector<float>> table_;
};

// Reads {"text": ..., "embedding": [...]} lines. Rows are L2-normalised on
// load. An empty file gives a provider of dimension `empty_dim` that fails
// every lookup. Throws FormatError on malformed lines, duplicate keys, mixed
// dimensions or zero/non-finite vectors.
std::unique_ptr<TableEmbedder> load_embedding_table(const std::filesystem::path& path,
                                                    int empty_dim = kDefaultEmbedDim);

// Writes one line per text in the order given.
void write_embedding_table(const std::filesystem::path& path, const EmbeddingProvider& provider,
                           const std::vector<std::string>& texts);

}  // namespace zlik
