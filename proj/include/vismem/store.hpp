#pragma once

// Embedding databases ("visual memory") and per-image patch grids, with their
// on-disk binary formats.
//
// Store file (little-endian):
//   "VMEM" | version u32 | dim u32 | count u64 | flags u32 (bit 0 = normalized)
//   count x { id u64 | label i64 | dim x f32 }
// Grid file:
//   "VGRD" | version u32 | dim u32 | rows u32 | cols u32 | image_id u64
//   rows*cols*dim x f32
// A store may carry a JSON sidecar "<path>.json" holding
//   { "dim", "count", "class_names", "source", "seed" }.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vismem {

inline constexpr std::int64_t kUnlabeled = -1;
inline constexpr std::uint32_t kStoreFormatVersion = 1;
inline constexpr std::uint32_t kGridFormatVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 24;
inline constexpr std::size_t kGridHeaderBytes = 28;

struct EmbeddingRecord {
  std::uint64_t id = 0;
  std::vector<float> vector;
  std::int64_t label = kUnlabeled;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct StoreMetadata {
  std::string source;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const StoreMetadata&, const StoreMetadata&) = default;
};

// Ordered set of (id, vector, label) records sharing one dimension.
//
// Records are kept in strictly increasing id order; every append is checked
// against the type invariants so a store that exists is a valid store. Vectors
// are stored contiguously (row-major, count x dim) with their L2 norms cached
// in double precision for cosine scoring.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::uint32_t dim);

  void append(std::uint64_t id, std::span<const float> vector,
              std::int64_t label = kUnlabeled);
  void append(const EmbeddingRecord& record) {
    append(record.id, record.vector, record.label);
  }
  void reserve(std::size_t count);

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }

  std::uint64_t id(std::size_t row) const { return ids_[row]; }
  std::int64_t label(std::size_t row) const { return labels_[row]; }
  double norm(std::size_t row) const { return norms_[row]; }
  std::span<const float> vector(std::size_t row) const {
    return {data_.data() + row * dim_, dim_};
  }
  EmbeddingRecord record(std::size_t row) const;

  std::span<const std::uint64_t> ids() const noexcept { return ids_; }
  std::span<const std::int64_t> labels() const noexcept { return labels_; }
  std::span<const float> data() const noexcept { return data_; }

  // Row index of `id`, if present.
  std::optional<std::size_t> find(std::uint64_t id) const;
  bool all_labeled() const noexcept;

  bool normalized() const noexcept { return normalized_; }
  // Setting the flag verifies every norm is within 1e-5 of 1.
  void set_normalized(bool normalized);

  const std::vector<std::string>& class_names() const noexcept {
    return class_names_;
  }
  void set_class_names(std::vector<std::string> names);

  const StoreMetadata& metadata() const noexcept { return metadata_; }
  void set_metadata(StoreMetadata metadata) { metadata_ = std::move(metadata); }

  // Structural equality: dimension, records (bitwise floats), flags, names.
  friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b);

 private:
  std::uint32_t dim_ = 0;
  bool normalized_ = false;
  std::vector<std::uint64_t> ids_;
  std::vector<std::int64_t> labels_;
  std::vector<float> data_;
  std::vector<double> norms_;
  std::vector<std::string> class_names_;
  StoreMetadata metadata_;
};

// H x W grid of d-dimensional patch embeddings for one image (row-major).
class PatchGrid {
 public:
  PatchGrid() = default;
  PatchGrid(std::uint64_t image_id, std::uint32_t rows, std::uint32_t cols,
            std::uint32_t dim, std::vector<float> patches);

  std::uint64_t image_id() const noexcept { return image_id_; }
  std::uint32_t rows() const noexcept { return rows_; }
  std::uint32_t cols() const noexcept { return cols_; }
  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t cells() const noexcept {
    return static_cast<std::size_t>(rows_) * cols_;
  }

  std::span<const float> patch(std::size_t cell) const {
    return {data_.data() + cell * dim_, dim_};
  }
  std::span<const float> patch(std::uint32_t row, std::uint32_t col) const {
    return patch(static_cast<std::size_t>(row) * cols_ + col);
  }
  std::span<const float> data() const noexcept { return data_; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  std::uint64_t image_id_ = 0;
  std::uint32_t rows_ = 0;
  std::uint32_t cols_ = 0;
  std::uint32_t dim_ = 0;
  std::vector<float> data_;
};

// In-memory encode/decode of the binary formats. Decoding fully validates.
std::string encode_store(const EmbeddingStore& store);
EmbeddingStore decode_store(std::string_view bytes);
std::string encode_grid(const PatchGrid& grid);
PatchGrid decode_grid(std::string_view bytes);

// Writes the binary file plus the "<path>.json" manifest sidecar.
void write_store(const EmbeddingStore& store, const std::filesystem::path& path);
// Reads the binary file and, when present, the manifest sidecar.
EmbeddingStore read_store(const std::filesystem::path& path);

void write_grid(const PatchGrid& grid, const std::filesystem::path& path);
PatchGrid read_grid(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& store_path);

// Returns a copy with every vector scaled to unit L2 norm. Throws on a
// zero-norm vector, naming its id.
EmbeddingStore l2_normalize(const EmbeddingStore& store);

}  // namespace vismem
