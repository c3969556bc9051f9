#include "vismem/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "vismem/error.hpp"
#include "vismem/file_util.hpp"

namespace vismem {

namespace {

constexpr char kStoreMagic[4] = {'V', 'M', 'E', 'M'};
constexpr char kGridMagic[4] = {'V', 'G', 'R', 'D'};
constexpr std::uint32_t kFlagNormalized = 1u;
constexpr double kUnitTolerance = 1e-5;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
  }
}

void put_f32(std::string& out, float value) {
  put_le(out, std::bit_cast<std::uint32_t>(value));
}

// Sequential little-endian reader over an in-memory file image.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    require(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(bits);
  }

  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

  bool magic_is(const char (&magic)[4]) {
    if (bytes_.size() < 4 || std::memcmp(bytes_.data(), magic, 4) != 0) return false;
    pos_ = 4;
    return true;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void require(std::size_t n) const {
    if (remaining() < n) {
      throw Error(Errc::truncated, "unexpected end of data at offset " +
                                       std::to_string(pos_) + " (need " +
                                       std::to_string(n) + " bytes, have " +
                                       std::to_string(remaining()) + ")");
    }
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(sum);
}

}  // namespace

EmbeddingStore::EmbeddingStore(std::uint32_t dim) : dim_(dim) {
  if (dim == 0) throw Error(Errc::invariant, "embedding dimension must be >= 1");
}

void EmbeddingStore::reserve(std::size_t count) {
  ids_.reserve(count);
  labels_.reserve(count);
  norms_.reserve(count);
  data_.reserve(count * dim_);
}

void EmbeddingStore::append(std::uint64_t id, std::span<const float> vector,
                            std::int64_t label) {
  if (dim_ == 0) throw Error(Errc::invariant, "store has no dimension");
  if (vector.size() != dim_) {
    throw Error(Errc::invariant, "record " + std::to_string(id) + " has dimension " +
                                     std::to_string(vector.size()) + ", store expects " +
                                     std::to_string(dim_));
  }
  if (!ids_.empty() && id <= ids_.back()) {
    throw Error(Errc::invariant, "record ids must be strictly increasing (" +
                                     std::to_string(id) + " after " +
                                     std::to_string(ids_.back()) + ")");
  }
  if (label < kUnlabeled) {
    throw Error(Errc::invariant, "record " + std::to_string(id) + " has negative label " +
                                     std::to_string(label));
  }
  if (!class_names_.empty() && label >= static_cast<std::int64_t>(class_names_.size())) {
    throw Error(Errc::invariant, "record " + std::to_string(id) + " label " +
                                     std::to_string(label) + " outside class_names");
  }
  for (float x : vector) {
    if (!std::isfinite(x)) {
      throw Error(Errc::invariant, "record " + std::to_string(id) + " has a non-finite component");
    }
  }
  const double norm = l2_norm(vector);
  if (normalized_ && std::abs(norm - 1.0) > kUnitTolerance) {
    throw Error(Errc::invariant, "record " + std::to_string(id) +
                                     " is not unit norm in a normalized store");
  }
  ids_.push_back(id);
  labels_.push_back(label);
  norms_.push_back(norm);
  data_.insert(data_.end(), vector.begin(), vector.end());
}

EmbeddingRecord EmbeddingStore::record(std::size_t row) const {
  auto v = vector(row);
  return {ids_[row], std::vector<float>(v.begin(), v.end()), labels_[row]};
}

std::optional<std::size_t> EmbeddingStore::find(std::uint64_t id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

bool EmbeddingStore::all_labeled() const noexcept {
  return std::all_of(labels_.begin(), labels_.end(),
                     [](std::int64_t l) { return l != kUnlabeled; });
}

void EmbeddingStore::set_normalized(bool normalized) {
  if (normalized) {
    for (std::size_t i = 0; i < size(); ++i) {
      if (std::abs(norms_[i] - 1.0) > kUnitTolerance) {
        throw Error(Errc::invariant, "record " + std::to_string(ids_[i]) +
                                         " has norm " + std::to_string(norms_[i]) +
                                         " but store is flagged normalized");
      }
    }
  }
  normalized_ = normalized;
}

void EmbeddingStore::set_class_names(std::vector<std::string> names) {
  if (!names.empty()) {
    for (std::size_t i = 0; i < size(); ++i) {
      if (labels_[i] >= static_cast<std::int64_t>(names.size())) {
        throw Error(Errc::invariant, "record " + std::to_string(ids_[i]) + " label " +
                                         std::to_string(labels_[i]) +
                                         " outside class_names");
      }
    }
  }
  class_names_ = std::move(names);
}

bool operator==(const EmbeddingStore& a, const EmbeddingStore& b) {
  if (a.dim_ != b.dim_ || a.normalized_ != b.normalized_ || a.ids_ != b.ids_ ||
      a.labels_ != b.labels_ || a.class_names_ != b.class_names_ ||
      a.metadata_ != b.metadata_ || a.data_.size() != b.data_.size()) {
    return false;
  }
  return std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

PatchGrid::PatchGrid(std::uint64_t image_id, std::uint32_t rows, std::uint32_t cols,
                     std::uint32_t dim, std::vector<float> patches)
    : image_id_(image_id), rows_(rows), cols_(cols), dim_(dim), data_(std::move(patches)) {
  if (rows == 0 || cols == 0 || dim == 0) {
    throw Error(Errc::invariant, "patch grid needs rows, cols and dim >= 1");
  }
  if (data_.size() != static_cast<std::size_t>(rows) * cols * dim) {
    throw Error(Errc::invariant, "patch grid payload has " + std::to_string(data_.size()) +
                                     " floats, expected rows*cols*dim = " +
                                     std::to_string(static_cast<std::size_t>(rows) * cols * dim));
  }
  for (float x : data_) {
    if (!std::isfinite(x)) throw Error(Errc::invariant, "patch grid has a non-finite component");
  }
}

std::string encode_store(const EmbeddingStore& store) {
  if (store.dim() == 0) throw Error(Errc::invariant, "cannot write a store without dimension");
  std::string out;
  out.reserve(kStoreHeaderBytes + store.size() * (16 + 4 * std::size_t{store.dim()}));
  out.append(kStoreMagic, 4);
  put_le(out, kStoreFormatVersion);
  put_le(out, store.dim());
  put_le(out, static_cast<std::uint64_t>(store.size()));
  put_le(out, store.normalized() ? kFlagNormalized : 0u);
  for (std::size_t i = 0; i < store.size(); ++i) {
    put_le(out, store.id(i));
    put_le(out, store.label(i));
    for (float x : store.vector(i)) put_f32(out, x);
  }
  return out;
}

EmbeddingStore decode_store(std::string_view bytes) {
  Reader in(bytes);
  if (!in.magic_is(kStoreMagic)) throw Error(Errc::bad_magic, "not a VMEM store (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kStoreFormatVersion) {
    throw Error(Errc::format, "unsupported VMEM version " + std::to_string(version));
  }
  const auto dim = in.get<std::uint32_t>();
  const auto count = in.get<std::uint64_t>();
  const auto flags = in.get<std::uint32_t>();
  if (dim == 0) throw Error(Errc::invariant, "VMEM dimension is zero");
  if ((flags & ~kFlagNormalized) != 0) {
    throw Error(Errc::format, "unknown VMEM flag bits " + std::to_string(flags));
  }
  const std::size_t record_bytes = 16 + 4 * std::size_t{dim};
  if (count > in.remaining() / record_bytes) {
    throw Error(Errc::truncated, "VMEM declares " + std::to_string(count) +
                                     " records but payload holds " +
                                     std::to_string(in.remaining() / record_bytes));
  }
  if (in.remaining() != count * record_bytes) {
    throw Error(Errc::format, "VMEM has " + std::to_string(in.remaining() - count * record_bytes) +
                                  " trailing bytes");
  }
  EmbeddingStore store(dim);
  store.reserve(count);
  std::vector<float> vec(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto id = in.get<std::uint64_t>();
    const auto label = in.get<std::int64_t>();
    for (auto& x : vec) x = in.get_f32();
    store.append(id, vec, label);
  }
  store.set_normalized((flags & kFlagNormalized) != 0);
  return store;
}

std::string encode_grid(const PatchGrid& grid) {
  std::string out;
  out.reserve(kGridHeaderBytes + grid.data().size() * 4);
  out.append(kGridMagic, 4);
  put_le(out, kGridFormatVersion);
  put_le(out, grid.dim());
  put_le(out, grid.rows());
  put_le(out, grid.cols());
  put_le(out, grid.image_id());
  for (float x : grid.data()) put_f32(out, x);
  return out;
}

PatchGrid decode_grid(std::string_view bytes) {
  Reader in(bytes);
  if (!in.magic_is(kGridMagic)) throw Error(Errc::bad_magic, "not a VGRD grid (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kGridFormatVersion) {
    throw Error(Errc::format, "unsupported VGRD version " + std::to_string(version));
  }
  const auto dim = in.get<std::uint32_t>();
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  const auto image_id = in.get<std::uint64_t>();
  const std::size_t floats = std::size_t{rows} * cols * dim;
  if (in.remaining() / 4 < floats) {
    throw Error(Errc::truncated, "VGRD declares " + std::to_string(floats) +
                                     " floats but payload holds " +
                                     std::to_string(in.remaining() / 4));
  }
  if (in.remaining() != floats * 4) throw Error(Errc::format, "VGRD has trailing bytes");
  std::vector<float> data(floats);
  for (auto& x : data) x = in.get_f32();
  return PatchGrid(image_id, rows, cols, dim, std::move(data));
}

std::filesystem::path manifest_path(const std::filesystem::path& store_path) {
  auto p = store_path;
  p += ".json";
  return p;
}

void write_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  const std::string bytes = encode_store(store);
  nlohmann::json manifest = {
      {"dim", store.dim()},
      {"count", store.size()},
      {"class_names", store.class_names()},
      {"source", store.metadata().source},
      {"seed", nullptr},
  };
  if (store.metadata().seed) manifest["seed"] = *store.metadata().seed;
  write_file(path, bytes);
  write_file(manifest_path(path), manifest.dump(2) + "\n");
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  EmbeddingStore store = decode_store(read_file(path));
  const auto side = manifest_path(path);
  if (std::filesystem::exists(side)) {
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_file(side));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::format, side.string() + ": " + e.what());
    }
    if (manifest.value("dim", std::uint64_t{store.dim()}) != store.dim() ||
        manifest.value("count", std::uint64_t{store.size()}) != store.size()) {
      throw Error(Errc::format, side.string() + ": manifest dim/count disagree with store");
    }
    store.set_class_names(manifest.value("class_names", std::vector<std::string>{}));
    StoreMetadata meta;
    meta.source = manifest.value("source", std::string{});
    if (manifest.contains("seed") && !manifest["seed"].is_null()) {
      meta.seed = manifest["seed"].get<std::uint64_t>();
    }
    store.set_metadata(std::move(meta));
  }
  return store;
}

void write_grid(const PatchGrid& grid, const std::filesystem::path& path) {
  write_file(path, encode_grid(grid));
}

PatchGrid read_grid(const std::filesystem::path& path) { return decode_grid(read_file(path)); }

EmbeddingStore l2_normalize(const EmbeddingStore& store) {
  EmbeddingStore out(store.dim());
  out.reserve(store.size());
  out.set_class_names(store.class_names());
  out.set_metadata(store.metadata());
  std::vector<float> scaled(store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const double norm = store.norm(i);
    if (norm == 0.0) {
      throw Error(Errc::invariant, "record " + std::to_string(store.id(i)) +
                                       " has zero norm; cosine similarity is undefined");
    }
    auto v = store.vector(i);
    for (std::size_t j = 0; j < v.size(); ++j) {
      scaled[j] = static_cast<float>(static_cast<double>(v[j]) / norm);
    }
    out.append(store.id(i), scaled, store.label(i));
  }
  out.set_normalized(true);
  return out;
}

}  // namespace vismem
