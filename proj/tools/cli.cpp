#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vismem/error.hpp"
#include "vismem/file_util.hpp"
#include "vismem/gestalt.hpp"
#include "vismem/image_io.hpp"
#include "vismem/knn.hpp"
#include "vismem/memory.hpp"
#include "vismem/parallel.hpp"
#include "vismem/procgen.hpp"
#include "vismem/segmentation.hpp"
#include "vismem/store.hpp"
#include "vismem/two_afc.hpp"

namespace vismem::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  bool csv = false;
  std::string report;
};

struct Output {
  json result;
  std::optional<std::string> csv;
};

struct Command {
  CLI::App* app = nullptr;
  bool csv = false;  // supports --csv
  std::function<Output()> run;
};

[[noreturn]] void usage(const std::string& what) { throw Error(Errc::usage, what); }

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_int(const std::string& s) {
  T v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// "1,2, 5" or newline-separated; used for --ids before any file is read.
std::set<std::uint64_t> parse_id_list(std::string_view text, const std::string& where) {
  std::set<std::uint64_t> ids;
  std::string flat(text);
  std::replace(flat.begin(), flat.end(), '\n', ',');
  for (const auto& tok : split(flat, ',')) {
    if (tok.empty()) continue;
    const auto id = parse_int<std::uint64_t>(tok);
    if (!id) usage("bad record id '" + tok + "' in " + where);
    ids.insert(*id);
  }
  return ids;
}

bool same_file(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  return fs::weakly_canonical(a, ec) == fs::weakly_canonical(b, ec);
}

std::vector<float> read_f32(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % sizeof(float) != 0) {
    throw Error(Errc::format, path.string() + ": " + std::to_string(bytes.size()) +
                                  " bytes is not a whole number of float32 values");
  }
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

LabelMask load_mask(const fs::path& path, std::uint32_t rows, std::uint32_t cols,
                    const std::string& policy) {
  LabelMask m = read_mask_png(path);
  if (m.rows == rows && m.cols == cols) return m;
  return downsample_mask(m, rows, cols, policy == "majority" ? MaskPolicy::majority : MaskPolicy::nearest);
}

// Fraction of non-ignore truth cells whose label the prediction matches.
double mask_accuracy(const LabelMask& predicted, const LabelMask& truth) {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < truth.cells(); ++i) {
    if (truth.labels[i] == kIgnoreLabel) continue;
    ++total;
    hit += predicted.labels[i] == truth.labels[i];
  }
  return total ? static_cast<double>(hit) / total : 0.0;
}

json label_counts(const LabelMask& m) {
  std::map<std::int32_t, std::size_t> counts;
  for (auto l : m.labels) ++counts[l];
  json out = json::object();
  for (const auto& [l, c] : counts) out[std::to_string(l)] = c;
  return out;
}

json summarize(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {{"min", *lo}, {"max", *hi}, {"mean", std::accumulate(v.begin(), v.end(), 0.0) / v.size()}};
}

// Options of a parsed subcommand, for the report's run_config.
json options_json(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const auto& longs = opt->get_lnames();
    if (!longs.empty() && longs.front() == "help") continue;
    const std::string name = longs.empty() ? opt->get_name() : "--" + longs.front();
    if (opt->get_expected_min() == 0) {
      out[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      out[name] = opt->get_expected_max() > 1 ? json(r) : json(r.back());
    } else if (!opt->get_default_str().empty()) {
      out[name] = opt->get_default_str();
    } else {
      out[name] = nullptr;
    }
  }
  return out;
}

// ------------------------------------------------------------------ commands

struct Cli {
  Globals g;
  std::map<std::string, Command> commands;

  void add(CLI::App& root, const std::string& name, const std::string& help, bool csv,
           const std::function<std::function<Output()>(CLI::App&)>& setup) {
    CLI::App* sub = root.add_subcommand(name, help);
    commands[name] = Command{sub, csv, setup(*sub)};
  }

  void build(CLI::App& app);
};

std::function<Output()> build_memory(CLI::App& sub) {
  struct Opts {
    std::string embeddings, labels, manifest, out, class_names, source;
    std::uint32_t dim = 0;
    bool normalize = false;
  };
  auto o = std::make_shared<Opts>();
  auto* emb = sub.add_option("--embeddings", o->embeddings, "raw little-endian float32 matrix");
  auto* dim = sub.add_option("--dim", o->dim, "vector dimension")->check(CLI::PositiveNumber);
  auto* lab = sub.add_option("--labels", o->labels, "CSV: one label or 'id,label' per row");
  sub.add_option("--manifest", o->manifest, "JSON lines {id, label, vector}")->excludes(emb)->excludes(dim)->excludes(lab);
  sub.add_option("--out", o->out, "output VMEM file")->required();
  sub.add_option("--class-names", o->class_names, "text file, one class name per line");
  sub.add_option("--source", o->source, "provenance note stored in the sidecar");
  sub.add_flag("--normalize", o->normalize, "L2-normalize every vector");

  return [o] {
    if (o->manifest.empty() && (o->embeddings.empty() || o->labels.empty() || o->dim == 0)) {
      usage("build-memory needs --manifest, or --embeddings with --dim and --labels");
    }
    struct Row {
      std::uint64_t id;
      std::int64_t label;
      std::vector<float> v;
    };
    std::vector<Row> rows;
    std::uint32_t d = o->dim;

    if (!o->manifest.empty()) {
      std::istringstream in(read_file(o->manifest));
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
          const json j = json::parse(line);
          Row r{j.value("id", static_cast<std::uint64_t>(rows.size())), j.value("label", std::int64_t{kUnlabeled}),
                j.at("vector").get<std::vector<float>>()};
          if (d == 0) d = static_cast<std::uint32_t>(r.v.size());
          if (r.v.size() != d) {
            throw Error(Errc::format, o->manifest + " line " + std::to_string(lineno) + ": vector has " +
                                          std::to_string(r.v.size()) + " values, expected " + std::to_string(d));
          }
          rows.push_back(std::move(r));
        } catch (const json::exception& e) {
          throw Error(Errc::format, o->manifest + " line " + std::to_string(lineno) + ": " + e.what());
        }
      }
    } else {
      const std::vector<float> flat = read_f32(o->embeddings);
      if (flat.size() % d != 0) {
        throw Error(Errc::format, o->embeddings + ": " + std::to_string(flat.size()) +
                                      " floats is not a multiple of dim " + std::to_string(d));
      }
      const std::size_t n = flat.size() / d;

      std::istringstream in(read_file(o->labels));
      std::string line;
      std::size_t lineno = 0;
      std::vector<std::pair<std::uint64_t, std::int64_t>> labels;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() > 2) {
          throw Error(Errc::format, o->labels + " line " + std::to_string(lineno) + ": expected 1 or 2 fields");
        }
        const auto label = parse_int<std::int64_t>(fields.back());
        const auto id = fields.size() == 2 ? parse_int<std::uint64_t>(fields[0])
                                           : std::optional<std::uint64_t>(labels.size());
        if (!label || !id) {
          if (labels.empty() && lineno == 1) continue;  // header
          throw Error(Errc::format, o->labels + " line " + std::to_string(lineno) + ": cannot parse '" + trim(line) + "'");
        }
        labels.emplace_back(*id, *label);
      }
      if (labels.size() != n) {
        throw Error(Errc::format, "row count mismatch: " + o->embeddings + " has " + std::to_string(n) +
                                      " rows but " + o->labels + " has " + std::to_string(labels.size()));
      }
      for (std::size_t i = 0; i < n; ++i) {
        rows.push_back({labels[i].first, labels[i].second,
                        std::vector<float>(flat.begin() + i * d, flat.begin() + (i + 1) * d)});
      }
    }
    if (d == 0) usage("build-memory: no records and no --dim");
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });

    EmbeddingStore store(d);
    if (!o->class_names.empty()) {
      std::vector<std::string> names;
      std::istringstream in(read_file(o->class_names));
      std::string line;
      while (std::getline(in, line)) {
        if (!trim(line).empty()) names.push_back(trim(line));
      }
      store.set_class_names(std::move(names));
    }
    store.reserve(rows.size());
    for (const auto& r : rows) store.append(r.id, r.v, r.label);
    if (o->normalize) store = l2_normalize(store);
    store.set_metadata({o->source, std::nullopt});
    write_store(store, o->out);
    return Output{{{"out", o->out},
                   {"count", store.size()},
                   {"dim", store.dim()},
                   {"normalized", store.normalized()},
                   {"labeled", store.all_labeled()},
                   {"classes", store.class_names().size()}}};
  };
}

std::function<Output()> classify_cmd(CLI::App& sub) {
  struct Opts {
    std::string memory, queries;
    std::size_t k = kDefaultK;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--memory", o->memory, "labeled VMEM store")->required();
  sub.add_option("--queries", o->queries, "VMEM store of queries")->required();
  sub.add_option("--k", o->k, "neighbors per vote")->capture_default_str()->check(CLI::PositiveNumber);
  return [o] {
    const EmbeddingStore memory = read_store(o->memory);
    const EmbeddingStore queries = read_store(o->queries);
    const auto preds = classify_batch(memory, queries, o->k);
    json list = json::array();
    std::string csv = "query_id,label,margin,neighbor_ids\n";
    for (std::size_t q = 0; q < preds.size(); ++q) {
      json p = to_json(preds[q]);
      p["query_id"] = queries.id(q);
      list.push_back(std::move(p));
      csv += std::to_string(queries.id(q)) + "," +
             (preds[q].label == kNullLabel ? std::string() : std::to_string(preds[q].label)) + "," +
             std::to_string(preds[q].margin) + ",";
      for (std::size_t i = 0; i < preds[q].neighbor_ids.size(); ++i) {
        csv += (i ? " " : "") + std::to_string(preds[q].neighbor_ids[i]);
      }
      csv += "\n";
    }
    return Output{{{"k", o->k}, {"predictions", list}}, csv};
  };
}

std::function<Output()> evaluate_cmd(CLI::App& sub) {
  struct Opts {
    std::string memory, queries;
    std::size_t k = kDefaultK;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--memory", o->memory, "labeled VMEM store")->required();
  sub.add_option("--queries", o->queries, "labeled VMEM store of queries")->required();
  sub.add_option("--k", o->k, "neighbors per vote")->capture_default_str()->check(CLI::PositiveNumber);
  return [o] {
    const auto report = evaluate_classification(read_store(o->memory), read_store(o->queries), o->k);
    return Output{to_json(report), to_csv(report)};
  };
}

std::function<Output()> two_afc_cmd(CLI::App& sub) {
  struct Opts {
    std::string manifest, store;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--manifest", o->manifest, "JSON lines {reference, option0, option1, human_choice}")->required();
  sub.add_option("--store", o->store, "VMEM store resolving integer keys");
  return [o] {
    const auto items = parse_two_afc_manifest(read_file(o->manifest));
    std::optional<EmbeddingStore> store;
    if (!o->store.empty()) store = read_store(o->store);
    const fs::path base = fs::path(o->manifest).parent_path();
    const Embedder embed = [&](const std::string& key) -> std::vector<float> {
      if (const auto id = parse_int<std::uint64_t>(key)) {
        if (!store) usage("manifest references store id " + key + " but no --store was given");
        const auto row = store->find(*id);
        if (!row) throw Error(Errc::invariant, "store has no record with id " + key);
        const auto v = store->vector(*row);
        return {v.begin(), v.end()};
      }
      const fs::path p(key);
      return read_f32(p.is_absolute() ? p : base / p);
    };
    const AlignmentResult r = two_afc_alignment(items, embed);
    std::ostringstream csv;
    csv.precision(17);
    csv << "trials,matches,proportion,standard_error\n"
        << r.trials << "," << r.matches << "," << r.proportion << "," << r.standard_error << "\n";
    return Output{{{"trials", r.trials},
                   {"matches", r.matches},
                   {"proportion", r.proportion},
                   {"standard_error", r.standard_error}},
                  csv.str()};
  };
}

std::function<Output()> audit_cmd(CLI::App& sub) {
  struct Opts {
    std::string memory, queries;
    std::size_t k = kDefaultK;
    bool naive = false;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--memory", o->memory, "labeled VMEM store")->required();
  sub.add_option("--queries", o->queries, "VMEM store of test queries")->required();
  sub.add_option("--k", o->k, "neighbors per vote")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_flag("--naive", o->naive, "leave-one-out rebuild instead of the fast path");
  return [o] {
    const MemoryHandle memory(read_store(o->memory));
    const EmbeddingStore queries = read_store(o->queries);
    const PrivacyAuditReport report = o->naive ? audit_privacy_naive(memory, queries, o->k)
                                               : audit_privacy_fast(memory, queries, o->k);
    json result = to_json(report);
    result["method"] = o->naive ? "naive" : "fast";
    result["queries"] = queries.size();
    std::string csv = "record_id,affected_query_ids\n";
    for (const auto& [id, qs] : report.affected) {
      csv += std::to_string(id) + ",";
      for (std::size_t i = 0; i < qs.size(); ++i) csv += (i ? " " : "") + std::to_string(qs[i]);
      csv += "\n";
    }
    return Output{result, csv};
  };
}

std::function<Output()> unlearn_cmd(CLI::App& sub) {
  struct Opts {
    std::string memory, ids, ids_file, out;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--memory", o->memory, "VMEM store to remove records from")->required();
  auto* ids = sub.add_option("--ids", o->ids, "comma-separated record ids");
  sub.add_option("--ids-file", o->ids_file, "file of record ids")->excludes(ids);
  sub.add_option("--out", o->out, "new VMEM file; the input is never modified")->required();
  return [o] {
    if (o->ids.empty() && o->ids_file.empty()) usage("unlearn needs --ids or --ids-file");
    if (same_file(o->memory, o->out)) usage("unlearn --out must differ from --memory");
    std::set<std::uint64_t> ids;
    if (!o->ids.empty()) ids = parse_id_list(o->ids, "--ids");
    if (!o->ids_file.empty()) ids = parse_id_list(read_file(o->ids_file), o->ids_file);
    if (ids.empty()) usage("unlearn: no record ids given");
    const MemoryHandle after = remove_records(MemoryHandle(read_store(o->memory)), ids);
    write_store(after.store(), o->out);
    return Output{{{"out", o->out},
                   {"removed", ids},
                   {"remaining", after.store().size()},
                   {"generation", after.generation()}}};
  };
}

std::function<Output()> segment_pca_cmd(CLI::App& sub) {
  struct Opts {
    std::vector<std::string> grids, masks;
    std::size_t components = 3;
    std::string policy = "nearest", png;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--grid", o->grids, "VGRD patch grids (PCA is fit on all of them)")->required();
  sub.add_option("--components", o->components, "principal components kept")
      ->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--mask", o->masks, "ground-truth mask PNG per grid, for R^2");
  sub.add_option("--policy", o->policy, "mask resampling")->capture_default_str()->check(CLI::IsMember({"nearest", "majority"}));
  sub.add_option("--png", o->png, "PCA-to-RGB visualization of the first grid");
  return [o] {
    if (!o->masks.empty() && o->masks.size() != o->grids.size()) {
      usage("segment-pca: got " + std::to_string(o->masks.size()) + " masks for " +
            std::to_string(o->grids.size()) + " grids");
    }
    std::vector<PatchGrid> grids;
    for (const auto& p : o->grids) grids.push_back(read_grid(p));
    const PcaModel model = fit_pca(grids, o->components);
    const double explained = std::accumulate(model.explained_variance.begin(), model.explained_variance.end(), 0.0);
    json per_grid = json::array();
    for (std::size_t i = 0; i < grids.size(); ++i) {
      const FeatureGrid features = project_grid(model, grids[i]);
      json entry = {{"grid", o->grids[i]}, {"image_id", grids[i].image_id()}};
      if (!o->masks.empty()) {
        entry["r2"] = to_json(r2_score(features, load_mask(o->masks[i], grids[i].rows(), grids[i].cols(), o->policy)));
      }
      if (i == 0 && !o->png.empty()) {
        write_png(Image8{grids[i].cols(), grids[i].rows(), 3, pca_rgb(features)}, o->png);
      }
      per_grid.push_back(std::move(entry));
    }
    return Output{{{"components", model.count()},
                   {"samples", model.samples},
                   {"explained_variance", model.explained_variance},
                   {"total_variance", model.total_variance},
                   {"explained_ratio", model.total_variance > 0 ? explained / model.total_variance : 0.0},
                   {"grids", per_grid}}};
  };
}

std::function<Output()> segment_incontext_cmd(CLI::App& sub) {
  struct Opts {
    std::string prompt, prompt_mask, query, truth, out, policy = "nearest";
    double threshold = 0.5;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--prompt", o->prompt, "VGRD grid of the exemplar image")->required();
  sub.add_option("--prompt-mask", o->prompt_mask, "mask PNG of the exemplar (1 = object)")->required();
  sub.add_option("--query", o->query, "VGRD grid to segment")->required();
  sub.add_option("--threshold", o->threshold, "cosine threshold")->capture_default_str()->check(CLI::Range(-1.0, 1.0));
  sub.add_option("--truth", o->truth, "ground-truth mask PNG of the query, for IoU");
  sub.add_option("--policy", o->policy, "mask resampling")->capture_default_str()->check(CLI::IsMember({"nearest", "majority"}));
  sub.add_option("--out", o->out, "predicted mask PNG");
  return [o] {
    const PatchGrid prompt = read_grid(o->prompt);
    const PatchGrid query = read_grid(o->query);
    const LabelMask pmask = load_mask(o->prompt_mask, prompt.rows(), prompt.cols(), o->policy);
    const InContextResult r = in_context_segment(prompt, pmask, query, o->threshold);
    json result = {{"threshold", o->threshold},
                   {"cells", r.mask.cells()},
                   {"positives", std::count(r.mask.labels.begin(), r.mask.labels.end(), 1)},
                   {"similarity", r.similarity},
                   {"similarity_summary", summarize(r.similarity)},
                   {"mean_prototype_summary", summarize(r.similarity_mean_prototype)}};
    if (!o->truth.empty()) {
      result["iou"] = mask_iou(r.mask, load_mask(o->truth, query.rows(), query.cols(), o->policy));
    }
    if (!o->out.empty()) write_mask_png(r.mask, o->out);
    return Output{result};
  };
}

std::function<Output()> segment_knn_cmd(CLI::App& sub) {
  struct Opts {
    std::string query, memory, truth, out, policy = "nearest";
    std::size_t k = kDefaultK;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--query", o->query, "VGRD grid to segment")->required();
  sub.add_option("--memory", o->memory, "labeled VMEM store of patch embeddings")->required();
  sub.add_option("--k", o->k, "neighbors per vote")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--truth", o->truth, "ground-truth mask PNG, for accuracy");
  sub.add_option("--policy", o->policy, "mask resampling")->capture_default_str()->check(CLI::IsMember({"nearest", "majority"}));
  sub.add_option("--out", o->out, "predicted mask PNG");
  return [o] {
    const PatchGrid query = read_grid(o->query);
    const LabelMask mask = knn_segment(query, read_store(o->memory), o->k);
    json result = {{"k", o->k}, {"cells", mask.cells()}, {"label_counts", label_counts(mask)}};
    if (!o->truth.empty()) {
      result["accuracy"] = mask_accuracy(mask, load_mask(o->truth, query.rows(), query.cols(), o->policy));
    }
    if (!o->out.empty()) write_mask_png(mask, o->out);
    return Output{result};
  };
}

std::function<Output()> segment_kmeans_cmd(CLI::App& sub, const Globals& g) {
  struct Opts {
    std::string grid, out;
    std::size_t clusters = 2, max_iters = 100;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--grid", o->grid, "VGRD grid to cluster")->required();
  sub.add_option("--clusters", o->clusters, "K")->capture_default_str()->check(CLI::Range(std::size_t{2}, std::size_t{254}));
  sub.add_option("--max-iters", o->max_iters, "Lloyd iteration cap")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--out", o->out, "cluster-id mask PNG");
  return [o, &g] {
    const PatchGrid grid = read_grid(o->grid);
    const KMeansSegmentation r = kmeans_segment(grid, o->clusters, g.seed, o->max_iters);
    if (!o->out.empty()) write_mask_png(r.mask, o->out);
    return Output{{{"clusters", r.clustering.k},
                   {"reduced_k", r.clustering.reduced_k},
                   {"inertia", r.clustering.inertia},
                   {"inertia_history", r.clustering.inertia_history},
                   {"iterations", r.clustering.iterations},
                   {"converged", r.clustering.converged},
                   {"label_counts", label_counts(r.mask)}}};
  };
}

std::function<Output()> gen_cmd(CLI::App& sub, const Globals& g) {
  struct Opts {
    std::string pipeline = "kml_mixup", out, rule = "luminance";
    std::size_t count = 1, clusters = 2, max_iters = 100;
    std::uint32_t width = 256, height = 256;
    double alpha = 1.0;
    std::optional<double> lambda;
    std::vector<std::string> kinds, sources;
    bool verify = false;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--pipeline", o->pipeline, "texture, kml, mixup or kml_mixup")->capture_default_str()
      ->check(CLI::IsMember({"texture", "kml", "mixup", "kml_mixup"}));
  sub.add_option("--count", o->count, "samples to write")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--out", o->out, "dataset directory")->required();
  sub.add_option("--width", o->width)->capture_default_str()->check(CLI::Range(1u, 8192u));
  sub.add_option("--height", o->height)->capture_default_str()->check(CLI::Range(1u, 8192u));
  sub.add_option("--clusters", o->clusters, "K of the KML mask")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--alpha", o->alpha, "Beta(alpha, alpha) for the Mixup weight")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_option("--lambda", o->lambda, "force the Mixup weight")->check(CLI::Range(0.0, 1.0));
  sub.add_option("--rule", o->rule, "cluster-to-source rule")->capture_default_str()->check(CLI::IsMember({"luminance", "random"}));
  sub.add_option("--kinds", o->kinds, "texture kinds to draw from")->delimiter(',')
      ->check(CLI::IsMember({"value-noise", "sine-grating", "voronoi", "gradient-blend"}));
  sub.add_option("--sources", o->sources, "three PNGs used as s1, s2, s3")->delimiter(',')->expected(3);
  sub.add_option("--max-iters", o->max_iters, "K-Means iteration cap")->capture_default_str()->check(CLI::PositiveNumber);
  sub.add_flag("--verify", o->verify, "regenerate every sample from the manifest and compare bytes");
  return [o, &g] {
    PipelineConfig config;
    config.pipeline = parse_pipeline(o->pipeline);
    config.width = o->width;
    config.height = o->height;
    config.clusters = o->clusters;
    config.alpha = o->alpha;
    config.lambda = o->lambda;
    config.rule = parse_assignment_rule(o->rule);
    if (!o->kinds.empty()) {
      config.kinds.clear();
      for (const auto& k : o->kinds) config.kinds.push_back(parse_texture_kind(k));
    }
    config.max_iters = o->max_iters;
    config.sources = o->sources;
    validate_pipeline_config(config);

    const auto rows = write_dataset(config, g.seed, o->count, o->out);
    json result = {{"dir", o->out},
                   {"count", rows.size()},
                   {"manifest", (fs::path(o->out) / kManifestFile).string()},
                   {"master_seed", g.seed},
                   {"config", to_json(config)}};
    if (o->verify) {
      for (const auto& row : read_manifest(o->out)) {
        const std::string file = row.at("file");
        if (encode_png(quantize(regenerate(row))) != read_file(fs::path(o->out) / file)) {
          throw Error(Errc::invariant, "regenerated " + file + " differs from the written file");
        }
      }
      result["verified"] = true;
    }
    return Output{result};
  };
}

std::function<Output()> gestalt_cmd(CLI::App& sub, const Globals& g) {
  struct Opts {
    std::string principle = "all", out;
    GestaltParams p;
  };
  auto o = std::make_shared<Opts>();
  std::vector<std::string> names{"all"};
  for (auto p : all_gestalt_principles()) names.push_back(to_string(p));
  sub.add_option("--principle", o->principle, "principle name or 'all'")->capture_default_str()->check(CLI::IsMember(names));
  sub.add_option("--out", o->out, "output directory")->required();
  sub.add_option("--width", o->p.width)->capture_default_str();
  sub.add_option("--height", o->p.height)->capture_default_str();
  sub.add_option("--radius", o->p.radius, "dot radius")->capture_default_str();
  sub.add_option("--spacing", o->p.spacing, "dot center spacing")->capture_default_str();
  sub.add_option("--count", o->p.count, "elements per group side")->capture_default_str();
  sub.add_option("--stroke", o->p.stroke, "line width")->capture_default_str();
  sub.add_option("--jitter", o->p.jitter, "max layout offset")->capture_default_str();
  sub.add_option("--size", o->p.size, "figure size for closure and kanizsa")->capture_default_str();
  return [o, &g] {
    std::vector<GestaltPrinciple> chosen;
    if (o->principle == "all") chosen = all_gestalt_principles();
    else chosen.push_back(parse_gestalt_principle(o->principle));
    std::vector<GestaltStimulus> stimuli;
    for (auto p : chosen) stimuli.push_back(gen_gestalt(p, o->p, g.seed));

    std::error_code ec;
    fs::create_directories(o->out, ec);
    if (ec) throw Error(Errc::io, "cannot create " + o->out + ": " + ec.message());
    json list = json::array();
    for (const auto& s : stimuli) {
      const std::string name = to_string(s.principle);
      const fs::path image = fs::path(o->out) / (name + ".png");
      const fs::path mask = fs::path(o->out) / (name + "_mask.png");
      write_png(quantize(s.image), image);
      write_mask_png(s.mask, mask);
      list.push_back({{"principle", name},
                      {"image", image.string()},
                      {"mask", mask.string()},
                      {"elements", s.elements.size()},
                      {"label_counts", label_counts(s.mask)}});
    }
    return Output{{{"params", to_json(o->p)}, {"stimuli", list}}};
  };
}

std::function<Output()> curve_cmd(CLI::App& sub) {
  struct Opts {
    std::vector<std::string> memories;
    std::string queries;
    std::size_t k = kDefaultK;
  };
  auto o = std::make_shared<Opts>();
  sub.add_option("--memory", o->memories, "name=path of a VMEM store (repeatable)")->required();
  sub.add_option("--queries", o->queries, "labeled VMEM store of test queries")->required();
  sub.add_option("--k", o->k, "neighbors per vote")->capture_default_str()->check(CLI::PositiveNumber);
  return [o] {
    std::vector<std::pair<std::string, std::string>> specs;
    std::set<std::string> seen;
    for (const auto& m : o->memories) {
      const auto eq = m.find('=');
      std::string name = eq == std::string::npos ? fs::path(m).stem().string() : m.substr(0, eq);
      std::string path = eq == std::string::npos ? m : m.substr(eq + 1);
      if (name.empty() || path.empty()) usage("bad --memory '" + m + "' (expected name=path)");
      if (!seen.insert(name).second) usage("duplicate memory name '" + name + "'");
      specs.emplace_back(std::move(name), std::move(path));
    }
    std::vector<NamedMemory> memories;
    for (const auto& [name, path] : specs) memories.push_back({name, MemoryHandle(read_store(path))});
    const auto points = privacy_accuracy_curve(memories, read_store(o->queries), o->k);
    json list = json::array();
    for (const auto& p : points) {
      list.push_back({{"memory", p.memory}, {"accuracy", p.accuracy}, {"fraction_non_private", p.fraction_non_private}});
    }
    return Output{{{"k", o->k}, {"points", list}}, curve_to_csv(points)};
  };
}

void Cli::build(CLI::App& app) {
  add(app, "build-memory", "Build a VMEM store from raw embeddings and labels", false, build_memory);
  add(app, "classify", "KNN-classify every query against a memory", true, classify_cmd);
  add(app, "evaluate", "Top-1 KNN accuracy of a memory on labeled queries", true, evaluate_cmd);
  add(app, "2afc", "Agreement of embedding 2AFC judgments with human choices", true, two_afc_cmd);
  add(app, "audit", "Records whose removal changes some query prediction", true, audit_cmd);
  add(app, "unlearn", "Write a copy of a memory without the given records", false, unlearn_cmd);
  add(app, "segment-pca", "PCA of patch grids, R^2 against masks", false, segment_pca_cmd);
  add(app, "segment-incontext", "Segment a query grid from one exemplar", false, segment_incontext_cmd);
  add(app, "segment-knn", "Label patches by KNN against a patch memory", false, segment_knn_cmd);
  add(app, "segment-kmeans", "Cluster the patches of a grid", false,
      [this](CLI::App& sub) { return segment_kmeans_cmd(sub, g); });
  add(app, "gen", "Write a procedural dataset with a regenerable manifest", false,
      [this](CLI::App& sub) { return gen_cmd(sub, g); });
  add(app, "gestalt", "Write gestalt stimuli and their grouping masks", false,
      [this](CLI::App& sub) { return gestalt_cmd(sub, g); });
  add(app, "curve", "Privacy-accuracy points for several memories", true, curve_cmd);
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_file(path, text);
  }
}

int report_error(std::ostream& err, Errc code, const std::string& what) {
  err << "vismem: " << to_string(code) << " error: " << what << "\n";
  return exit_code(code);
}

int run_impl(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
             const std::optional<std::string>& report_override) {
  CLI::App app{"Visual-memory engine: KNN memory, unlearning, privacy audits, segmentation probes "
               "and procedural data.",
               "vismem"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(VISMEM_VERSION));

  Cli cli;
  app.add_option("--seed", cli.g.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--threads", cli.g.threads, "worker threads (results do not depend on it)")
      ->envname("VISMEM_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_flag("--csv", cli.g.csv, "write a CSV table instead of the JSON report");
  app.add_option("--report", cli.g.report, "report file (default: stdout)");
  cli.build(app);

  std::string rerun_report;
  CLI::App* rerun = app.add_subcommand("rerun", "Re-execute the command recorded in a report");
  rerun->add_option("report", rerun_report, "JSON report to replay")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_code(Errc::usage);
  }

  try {
    if (cli.g.threads > 0) set_num_threads(cli.g.threads);
    if (rerun->parsed()) {
      if (cli.g.csv) usage("rerun takes the format from the recorded command; drop --csv");
      json recorded;
      try {
        recorded = json::parse(read_file(rerun_report));
      } catch (const json::exception& e) {
        throw Error(Errc::format, rerun_report + ": " + e.what());
      }
      const auto& argv = recorded.at("run_config").at("argv");
      std::vector<std::string> replay = argv.get<std::vector<std::string>>();
      if (!replay.empty() && std::find(replay.begin(), replay.end(), "rerun") != replay.end()) {
        usage("refusing to replay a rerun");
      }
      return run_impl(replay, out, err, cli.g.report.empty() ? std::nullopt : std::optional(cli.g.report));
    }

    CLI::App* sub = app.get_subcommands().front();
    const Command& cmd = cli.commands.at(sub->get_name());
    if (cli.g.csv && !cmd.csv) usage("--csv is not supported by " + sub->get_name());

    Output o = cmd.run();
    const std::string dest = report_override.value_or(cli.g.report);
    if (cli.g.csv) {
      emit(*o.csv, dest, out);
    } else {
      const json report = {{"tool", "vismem"},
                           {"version", VISMEM_VERSION},
                           {"command", sub->get_name()},
                           {"run_config",
                            {{"argv", args}, {"seed", cli.g.seed}, {"csv", cli.g.csv}, {"options", options_json(*sub)}}},
                           {"timestamp", timestamp()},
                           {"result", std::move(o.result)}};
      emit(report.dump(2) + "\n", dest, out);
    }
    return 0;
  } catch (const Error& e) {
    return report_error(err, e.code(), e.what());
  } catch (const json::exception& e) {
    return report_error(err, Errc::format, e.what());
  } catch (const std::exception& e) {
    return report_error(err, Errc::invariant, e.what());
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return run_impl(args, out, err, std::nullopt);
}

}  // namespace vismem::cli
