#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "biounet/checkpoint.hpp"
#include "biounet/config.hpp"
#include "biounet/dataset.hpp"
#include "biounet/errors.hpp"
#include "biounet/evaluation.hpp"
#include "biounet/fusion.hpp"
#include "biounet/image_io.hpp"
#include "biounet/records.hpp"
#include "biounet/synthetic.hpp"
#include "biounet/trainer.hpp"

namespace biounet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kManifestVersion = 1;

/// Output directory plus the list of files written into it.
class RunDir {
 public:
  RunDir(std::string root, std::string command) : root_(std::move(root)), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_)) throw IoError("cannot create output directory " + root_);
  }

  std::string path(const std::string& rel) const { return (fs::path(root_) / rel).string(); }
  void add(const std::string& rel) {
    if (std::find(artifacts_.begin(), artifacts_.end(), rel) == artifacts_.end()) artifacts_.push_back(rel);
  }
  void text(const std::string& rel, const std::string& content) {
    records::write_text(path(rel), content);
    add(rel);
  }
  void json_file(const std::string& rel, const json& value) {
    records::write_json(path(rel), value);
    add(rel);
  }

  json manifest;  // command-specific fields

  void write_manifest(const std::string& status) const {
    json m{{"schema", "biounet.run"}, {"schema_version", kManifestVersion}, {"command", command_}, {"status", status}};
    for (auto it = manifest.begin(); it != manifest.end(); ++it) m[it.key()] = it.value();
    json files = json::array();
    for (const auto& a : artifacts_) files.push_back(a);
    m["artifacts"] = files;
    records::write_json(path("manifest.json"), m);
  }

 private:
  std::string root_;
  std::string command_;
  std::vector<std::string> artifacts_;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BIOUNET_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != std::string(s).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("BIOUNET_SEED", "not an unsigned integer: '" + std::string(s) + "'");
  }
}

std::size_t parse_attribute(const std::string& text) {
  if (!text.empty() && std::all_of(text.begin(), text.end(), ::isdigit)) {
    const auto v = std::stoul(text);
    if (v >= data::kAttributeCount) throw ConfigError("attribute", "must lie in 0..4, got " + text);
    return v;
  }
  try {
    return data::attribute_index(text);
  } catch (const Error&) {
    throw ConfigError("attribute", "unknown attribute '" + text + "'");
  }
}

std::string attribute_dir(std::size_t j) { return "attr" + std::to_string(j) + "_" + data::kAttributeNames[j]; }

json split_hashes(const data::Dataset& d) {
  json out = json::object();
  for (auto s : {data::Split::train, data::Split::validation, data::Split::test}) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    const auto idx = d.indices(s);
    for (auto i : idx) h = hash_string(d.samples[i].id + "\n", h);
    out[data::to_string(s)] = {{"count", idx.size()}, {"hash", hex64(h)}};
  }
  return out;
}

std::string presence_table(const data::Dataset& d) {
  std::ostringstream os;
  os << "Comparison of the number of non-empty masks (n = " << d.samples.size() << ")\n";
  os << std::left << std::setw(20) << "Attribute" << std::right << std::setw(10) << "Nonempty" << std::setw(10)
     << "Empty" << '\n';
  for (std::size_t j = 0; j < data::kAttributeCount; ++j) {
    std::size_t nonempty = 0;
    for (const auto& s : d.samples) nonempty += s.present(j) ? 1 : 0;
    os << std::left << std::setw(20) << data::kAttributeNames[j] << std::right << std::setw(10) << nonempty
       << std::setw(10) << d.samples.size() - nonempty << '\n';
  }
  std::size_t positive = 0;
  for (const auto& s : d.samples) positive += s.diagnosis;
  os << std::left << std::setw(20) << "diagnosis=1" << std::right << std::setw(10) << positive << std::setw(10)
     << d.samples.size() - positive << '\n';
  return os.str();
}

data::IndicatorRates parse_rates(const std::string& text) {
  data::IndicatorRates rates{};
  std::stringstream ss(text);
  std::string item;
  std::size_t k = 0;
  while (std::getline(ss, item, ',')) {
    if (k >= data::kAttributeCount) throw ConfigError("rates", "expected 5 comma-separated probabilities");
    try {
      std::size_t pos = 0;
      rates[k] = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ConfigError("rates", "not a number: '" + item + "'");
    }
    if (!(rates[k] >= 0.0 && rates[k] <= 1.0)) throw ConfigError("rates", "probabilities must lie in [0, 1]");
    ++k;
  }
  if (k != data::kAttributeCount) throw ConfigError("rates", "expected 5 comma-separated probabilities");
  return rates;
}

// ---- gen-data -------------------------------------------------------------

struct GenOptions {
  std::size_t n = 800;
  std::size_t n_unlabeled = 4000;
  std::size_t size = 64;
  std::optional<std::uint64_t> seed;
  std::string rates;
  std::string out;
};

int gen_data(const GenOptions& o, std::ostream& out) {
  const std::uint64_t seed = o.seed ? *o.seed : env_seed().value_or(RunConfig{}.seed);
  const data::IndicatorRates rates = o.rates.empty() ? data::kDefaultRates : parse_rates(o.rates);
  if (o.size < 32 || o.size % 16 != 0) throw ConfigError("size", "must be a multiple of 16 and at least 32");
  if (o.n == 0) throw ConfigError("n", "must be positive");
  RunDir dir(o.out, "gen-data");
  const data::Dataset labeled = data::gen_synthetic(o.n, o.size, seed, rates);
  const data::UnlabeledDataset unlabeled = data::gen_synthetic_unlabeled(o.n_unlabeled, o.size, seed);
  dir.manifest = {{"seed", seed},
                  {"n", o.n},
                  {"n_unlabeled", o.n_unlabeled},
                  {"size", o.size},
                  {"rates", std::vector<double>(rates.begin(), rates.end())},
                  {"labeled", "labeled"},
                  {"unlabeled", "unlabeled"},
                  {"splits", split_hashes(labeled)},
                  {"normalization", labeled.stats.to_json()}};
  dir.write_manifest("running");
  for (const auto& rel : data::export_dataset(labeled, dir.path("labeled"))) dir.add("labeled/" + rel);
  for (const auto& rel : data::export_unlabeled(unlabeled, dir.path("unlabeled"))) dir.add("unlabeled/" + rel);
  dir.write_manifest("complete");
  out << presence_table(labeled);
  return kSuccess;
}

// ---- train ----------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string attribute = "all";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> labeled, unlabeled;
  std::optional<std::size_t> epochs, repeat_k, clr_steps, seg_batches, cls_batches, patience;
  std::optional<std::string> mode, cam_method;
  std::optional<double> lr;
  bool no_clr = false;
  bool no_seg = false;
};

RunConfig effective_config(const TrainOptions& o, json& overrides) {
  json doc = json::object();
  if (!o.config.empty()) doc = records::read_json(o.config);
  if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
  RunConfig c = run_config_from_json(doc);
  overrides = json::object();
  if (o.seed) {
    c.seed = *o.seed;
    overrides["seed"] = *o.seed;
  } else if (!doc.contains("seed")) {
    if (auto s = env_seed()) {
      c.seed = *s;
      overrides["seed"] = "BIOUNET_SEED";
    }
  }
  if (o.labeled) c.data.labeled = *o.labeled, overrides["labeled"] = *o.labeled;
  if (o.unlabeled) c.data.unlabeled = *o.unlabeled, overrides["unlabeled"] = *o.unlabeled;
  if (o.epochs) c.train.epochs = *o.epochs, overrides["epochs"] = *o.epochs;
  if (o.repeat_k) c.train.repeat_k = *o.repeat_k, overrides["repeat_k"] = *o.repeat_k;
  if (o.clr_steps) c.train.clr_steps_per_epoch = *o.clr_steps, overrides["clr_steps"] = *o.clr_steps;
  if (o.seg_batches) c.train.seg_batches_per_epoch = *o.seg_batches, overrides["seg_batches"] = *o.seg_batches;
  if (o.cls_batches) c.train.cls_batches_per_epoch = *o.cls_batches, overrides["cls_batches"] = *o.cls_batches;
  if (o.patience) c.train.patience = *o.patience, overrides["patience"] = *o.patience;
  if (o.lr) c.optim.lr = *o.lr, overrides["lr"] = *o.lr;
  if (o.cam_method) {
    c.train.cam_method = parse_cam_method(*o.cam_method);
    overrides["cam_method"] = *o.cam_method;
  }
  if (o.mode) {
    c.train.multitask_mode = parse_multitask_mode(*o.mode);
    c.model.classifier_width = head_width(c.train.multitask_mode);
    overrides["mode"] = *o.mode;
  }
  if (o.no_clr) c.train.enable_clr = false, overrides["no_clr"] = true;
  if (o.no_seg) c.train.enable_seg = false, overrides["no_seg"] = true;
  validate(c);
  if (c.data.labeled.empty()) throw ConfigError("data.labeled", "no labeled dataset given");
  if (c.train.enable_clr && c.train.clr_steps_per_epoch > 0 && c.data.unlabeled.empty()) {
    throw ConfigError("data.unlabeled", "contrastive training needs an unlabeled dataset (or --no-clr)");
  }
  return c;
}

void write_attribute(RunDir& dir, const pipeline::Trainer& trainer, const std::optional<Checkpoint>& best,
                     json& summary) {
  const std::size_t j = trainer.attribute();
  const std::string base = attribute_dir(j);
  const auto heads = pipeline::head_names(j, trainer.config().train.multitask_mode);
  dir.text(base + "/metrics.csv", records::epochs_table(trainer.epochs(), heads).str());
  dir.text(base + "/steps.csv", records::steps_table(trainer.steps()).str());
  json epochs = json::array();
  for (const auto& e : trainer.epochs()) epochs.push_back(e.to_json());
  dir.json_file(base + "/metrics.json", epochs);
  json entry{{"attribute", j}, {"name", data::kAttributeNames[j]}, {"epochs", epochs}};
  if (best) {
    save(*best, dir.path(base + "/checkpoint.bin"));
    dir.add(base + "/checkpoint.bin");
    entry["checkpoint"] = base + "/checkpoint.bin";
    entry["checkpoint_hash"] = hex64(content_hash(*best));
    entry["best_epoch"] = best->epoch;
    entry["selection_metric"] = best->selection_metric;
    entry["selection_definition"] = best->selection_definition;
  }
  summary.push_back(entry);
}

int train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  json overrides;
  const RunConfig config = effective_config(o, overrides);
  std::vector<std::size_t> attributes;
  if (o.attribute == "all") {
    for (std::size_t j = 0; j < data::kAttributeCount; ++j) attributes.push_back(j);
  } else {
    attributes.push_back(parse_attribute(o.attribute));
  }
  const data::Dataset labeled = data::import_dataset(config.data.labeled);
  std::optional<data::UnlabeledDataset> unlabeled;
  if (!config.data.unlabeled.empty()) unlabeled = data::import_unlabeled(config.data.unlabeled);

  RunDir dir(o.out, "train");
  dir.manifest = {{"config", to_json(config)},
                  {"overrides", overrides},
                  {"attributes", attributes},
                  {"seed", config.seed},
                  {"labeled", {{"path", config.data.labeled}, {"samples", labeled.samples.size()}, {"splits", split_hashes(labeled)}}},
                  {"unlabeled", unlabeled ? json{{"path", config.data.unlabeled}, {"samples", unlabeled->samples.size()}}
                                          : json(nullptr)},
                  {"normalization", (labeled.stats.valid ? labeled.stats : data::compute_stats(labeled)).to_json()},
                  {"selection_definition", pipeline::kSelectionDefinition}};
  dir.write_manifest("running");

  json summary = json::array();
  std::vector<Checkpoint> bests;
  std::unique_ptr<pipeline::Model> shared;
  const bool multitask = config.train.multitask_mode != MultitaskMode::per_attribute;
  for (std::size_t j : attributes) {
    pipeline::Trainer trainer(config, labeled, unlabeled ? &*unlabeled : nullptr, j, std::move(shared));
    err << "training attribute " << j << " (" << data::kAttributeNames[j] << ")\n";
    try {
      std::size_t reported = 0;
      while (trainer.step()) {
        for (; reported < trainer.epochs().size(); ++reported) {
          const auto& e = trainer.epochs()[reported];
          err << "  epoch " << e.epoch << ": val_loss " << records::format_number(e.val_loss) << ", metric "
              << records::format_number(e.selection_metric) << (e.best ? " *" : "") << '\n';
        }
      }
    } catch (const NumericError& e) {
      write_attribute(dir, trainer, trainer.best(), summary);
      dir.manifest["results"] = summary;
      dir.manifest["error"] = e.what();
      dir.write_manifest("diverged");
      throw;
    }
    write_attribute(dir, trainer, trainer.best(), summary);
    bests.push_back(*trainer.best());
    if (multitask) shared = trainer.release_model();
  }
  dir.manifest["results"] = summary;

  if (attributes.size() == data::kAttributeCount) {
    err << "fusing the five encoders\n";
    const auto fused = fusion::fuse_and_diagnose(bests, labeled);
    dir.json_file("fusion.json", fused.to_json());
    dir.manifest["fusion"] = {{"path", "fusion.json"},
                              {"test_accuracy", fused.fused.test.accuracy},
                              {"test_auc", fused.fused.test.auc ? json(*fused.fused.test.auc) : json(nullptr)}};
  }
  dir.write_manifest("complete");
  for (const auto& s : summary) {
    out << s.at("name").get<std::string>() << ": best epoch " << s.value("best_epoch", -1) << ", metric "
        << records::format_number(s.value("selection_metric", 0.0)) << '\n';
  }
  if (dir.manifest.contains("fusion")) {
    out << "fused diagnosis: test accuracy " << records::format_number(dir.manifest["fusion"]["test_accuracy"])
        << ", test AUC "
        << (dir.manifest["fusion"]["test_auc"].is_null() ? "undefined"
                                                          : records::format_number(dir.manifest["fusion"]["test_auc"]))
        << '\n';
  }
  return kSuccess;
}

// ---- checkpoints ----------------------------------------------------------

/// Five checkpoints from a train output directory or an explicit list; a
/// single file is reused for every attribute.
std::vector<Checkpoint> load_checkpoints(const std::vector<std::string>& inputs) {
  std::vector<std::string> paths;
  if (inputs.size() == 1 && fs::is_directory(inputs[0])) {
    for (std::size_t j = 0; j < data::kAttributeCount; ++j)
      paths.push_back((fs::path(inputs[0]) / attribute_dir(j) / "checkpoint.bin").string());
  } else if (inputs.size() == 1) {
    paths.assign(data::kAttributeCount, inputs[0]);
  } else if (inputs.size() == data::kAttributeCount) {
    paths = inputs;
  } else {
    throw ConfigError("checkpoints", "give a run directory, one checkpoint, or five checkpoints");
  }
  std::vector<Checkpoint> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw IoError("missing checkpoint " + p);
    out.push_back(load_checkpoint(p));
  }
  return out;
}

bool all_distinct(const std::vector<std::string>& inputs) {
  return (inputs.size() == 1 && fs::is_directory(inputs[0])) || inputs.size() == data::kAttributeCount;
}

// ---- explain --------------------------------------------------------------

struct ExplainOptions {
  std::string checkpoint;
  std::string image;
  std::string attribute;
  std::optional<std::string> method;
  std::string out;
  bool montage = false;
};

std::vector<float> overlay(const std::vector<float>& rgb, std::span<const float> map, std::size_t P) {
  std::vector<float> o(3 * P);
  for (std::size_t i = 0; i < P; ++i) {
    const float a = 0.6f * map[i];
    o[i] = (1 - a) * rgb[i] + a;
    o[P + i] = (1 - a) * rgb[P + i];
    o[2 * P + i] = (1 - a) * rgb[2 * P + i];
  }
  return o;
}

int explain(const ExplainOptions& o, std::ostream& out) {
  const std::size_t j = parse_attribute(o.attribute);
  if (!fs::exists(o.checkpoint)) throw IoError("missing checkpoint " + o.checkpoint);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  evaluation::Explainer ex(ck);
  const CamMethod method = o.method ? parse_cam_method(*o.method) : ex.stack_method();
  io::Image img = io::read_netpbm(o.image);
  if (img.channels == 1) {
    std::vector<float> rgb;
    for (int c = 0; c < 3; ++c) rgb.insert(rgb.end(), img.data.begin(), img.data.end());
    img.data = std::move(rgb);
    img.channels = 3;
  }
  const std::size_t S = ck.model.image_size;
  std::vector<float> rgb = (img.h == S && img.w == S) ? img.data : data::resize_planar(img.data, 3, img.h, img.w, S, S);
  const std::string id = fs::path(o.image).stem().string();

  RunDir dir(o.out, "explain");
  dir.manifest = {{"checkpoint", o.checkpoint},
                  {"checkpoint_hash", hex64(content_hash(ck))},
                  {"image", o.image},
                  {"attribute", j},
                  {"method", to_string(method)},
                  {"head", ex.head_for(j)}};
  dir.write_manifest("running");
  const Tensor<float> x = ex.inputs({&rgb}, S);
  const auto stacks = ex.stacks(x, j, method);
  const auto& stack = stacks.at(0);
  json degenerate = json::array();
  for (std::size_t k = 1; k <= cam::kStackDepth; ++k) {
    const std::string rel = cam::heatmap_filename(id, j, k, method);
    io::write_pgm(dir.path(rel), stack.block(k), S, S);
    dir.add(rel);
    if (stack.degenerate[k - 1]) degenerate.push_back(k);
  }
  // The segmentation input always uses the CAM method the decoder was trained on.
  const auto seg_stacks = method == ex.stack_method() ? stacks : ex.stacks(x, j, ex.stack_method());
  const auto mask = ex.segment(seg_stacks).at(0);
  const std::string mask_rel = id + "_attr" + std::to_string(j) + "_bio_unet.pgm";
  io::write_pgm(dir.path(mask_rel), mask, S, S);
  dir.add(mask_rel);
  if (o.montage) {
    const std::size_t P = S * S;
    const auto cam_overlay = overlay(rgb, stack.last(), P);
    const auto seg_overlay = overlay(rgb, mask, P);
    std::vector<float> wide(3 * P * 3);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x0 = 0; x0 < S; ++x0) {
          const std::size_t src = c * P + y * S + x0;
          const std::size_t row = c * 3 * P + y * 3 * S;
          wide[row + x0] = rgb[src];
          wide[row + S + x0] = cam_overlay[src];
          wide[row + 2 * S + x0] = seg_overlay[src];
        }
    const std::string rel = id + "_attr" + std::to_string(j) + "_montage.ppm";
    io::write_ppm(dir.path(rel), wide, S, 3 * S);
    dir.add(rel);
  }
  dir.manifest["degenerate_blocks"] = degenerate;
  dir.write_manifest("complete");
  out << "wrote " << cam::kStackDepth << " block heatmaps and 1 segmentation mask to " << o.out << '\n';
  return kSuccess;
}

// ---- eval / fuse ----------------------------------------------------------

struct EvalOptions {
  std::vector<std::string> checkpoints;
  std::string dataset;
  std::vector<std::string> methods{"bio_unet", "grad_cam", "grad_cam_pp", "layer_cam"};
  std::string split = "test";
  bool percent = false;
  std::string out;
};

json diagnosis_json(const fusion::FusionResult& r) {
  json singles = json::array();
  for (const auto& s : r.single) singles.push_back(s.test.to_json());
  return json{{"fused", r.fused.test.to_json()}, {"single_encoder", singles}};
}

int eval(const EvalOptions& o, std::ostream& out) {
  std::vector<evaluation::LocalizationMethod> methods;
  for (const auto& m : o.methods) methods.push_back(evaluation::parse_localization_method(m));
  const data::Split split = data::parse_split(o.split);
  const auto checkpoints = load_checkpoints(o.checkpoints);
  const data::Dataset dataset = data::import_dataset(o.dataset);
  const double scale = o.percent ? 100.0 : 1.0;

  RunDir dir(o.out, "eval");
  dir.manifest = {{"checkpoints", o.checkpoints}, {"dataset", o.dataset}, {"methods", o.methods},
                  {"split", o.split},             {"percent", o.percent}};
  dir.write_manifest("running");

  std::vector<std::string> header{"method"};
  for (auto n : data::kAttributeNames) header.emplace_back(n);
  records::CsvTable table(header);
  json rows = json::array(), details = json::array();
  std::vector<std::unique_ptr<evaluation::Explainer>> explainers;
  for (const auto& ck : checkpoints) explainers.push_back(std::make_unique<evaluation::Explainer>(ck));
  for (auto m : methods) {
    std::vector<std::string> row{evaluation::to_string(m)};
    json values = json::object();
    for (std::size_t j = 0; j < data::kAttributeCount; ++j) {
      const auto r = evaluation::evaluate_localization(*explainers[j], dataset, split, j, m);
      row.push_back(r.empty ? "" : records::format_number(scale * r.mean_cdc));
      values[data::kAttributeNames[j]] = r.empty ? json(nullptr) : json(scale * r.mean_cdc);
      details.push_back(r.to_json());
    }
    table.add_row(std::move(row));
    rows.push_back({{"method", evaluation::to_string(m)}, {"cdc", values}});
  }
  dir.text("localization.csv", table.str());
  json result{{"split", o.split}, {"unit", o.percent ? "percent" : "fraction"}, {"localization", rows}};

  if (all_distinct(o.checkpoints)) {
    const auto fused = fusion::fuse_and_diagnose(checkpoints, dataset);
    result["diagnosis"] = diagnosis_json(fused);
  }
  // Diagnosis heads trained jointly (two- and six-task modes).
  json heads = json::array();
  for (std::size_t j = 0; j < checkpoints.size(); ++j) {
    if (j > 0 && !all_distinct(o.checkpoints)) break;
    for (const auto& h : evaluation::evaluate_classification(checkpoints[j], dataset, split)) {
      heads.push_back({{"checkpoint", j}, {"head", h.name}, {"accuracy", h.accuracy},
                       {"auc", h.auc ? json(*h.auc) : json(nullptr)}});
    }
  }
  result["classifier_heads"] = heads;
  dir.json_file("metrics.json", result);
  dir.json_file("localization_samples.json", details);
  dir.write_manifest("complete");

  out << table.str();
  if (result.contains("diagnosis")) {
    const auto& f = result["diagnosis"]["fused"];
    out << "diagnosis (fused): accuracy " << records::format_number(f["accuracy"].get<double>()) << ", AUC "
        << (f["auc"].is_null() ? "undefined" : records::format_number(f["auc"].get<double>())) << '\n';
  }
  return kSuccess;
}

struct FuseOptions {
  std::vector<std::string> checkpoints;
  std::string dataset;
  std::string out;
};

int fuse(const FuseOptions& o, std::ostream& out) {
  if (!all_distinct(o.checkpoints)) throw ConfigError("checkpoints", "fusion needs five attribute checkpoints");
  const auto checkpoints = load_checkpoints(o.checkpoints);
  const data::Dataset dataset = data::import_dataset(o.dataset);
  RunDir dir(o.out, "fuse");
  dir.manifest = {{"checkpoints", o.checkpoints}, {"dataset", o.dataset}};
  dir.write_manifest("running");
  const auto r = fusion::fuse_and_diagnose(checkpoints, dataset);
  dir.json_file("fusion.json", r.to_json());
  dir.write_manifest("complete");
  auto fmt = [](const std::optional<double>& v) { return v ? records::format_number(*v) : std::string("undefined"); };
  out << "fused: test accuracy " << records::format_number(r.fused.test.accuracy) << ", test AUC "
      << fmt(r.fused.test.auc) << '\n';
  for (std::size_t j = 0; j < r.single.size(); ++j) {
    out << data::kAttributeNames[j] << " encoder alone: test AUC " << fmt(r.single[j].test.auc) << '\n';
  }
  return kSuccess;
}

// ---- report ---------------------------------------------------------------

int report(const std::string& run, const std::string& out_dir, std::ostream& out) {
  const json m = records::read_json((fs::path(run) / "manifest.json").string());
  if (m.value("command", "") != "train") throw ConfigError("run", run + " is not a train output directory");
  std::ostringstream md;
  md << "| attribute | best epoch | selection metric | epochs |\n|---|---|---|---|\n";
  for (const auto& r : m.value("results", json::array())) {
    md << "| " << r.at("name").get<std::string>() << " | " << r.value("best_epoch", -1) << " | "
       << records::format_number(r.value("selection_metric", 0.0)) << " | " << r.at("epochs").size() << " |\n";
  }
  if (m.contains("fusion")) {
    const auto& f = m.at("fusion");
    md << "\nFused diagnosis on the test split: accuracy " << records::format_number(f.at("test_accuracy").get<double>())
       << ", AUC " << (f.at("test_auc").is_null() ? "undefined" : records::format_number(f.at("test_auc").get<double>()))
       << "\n";
  }
  out << md.str();
  if (!out_dir.empty()) {
    RunDir dir(out_dir, "report");
    dir.manifest = {{"run", run}, {"status_of_run", m.value("status", "")}};
    dir.text("report.md", md.str());
    dir.write_manifest("complete");
  }
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bio-UNet: interpretable dermoscopic attribute localization"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a seeded synthetic dataset pair");
  g->add_option("--n", gen.n, "Labeled samples")->check(CLI::PositiveNumber);
  g->add_option("--n-unlabeled", gen.n_unlabeled, "Unlabeled samples");
  g->add_option("--size", gen.size, "Image side in pixels");
  g->add_option("--seed", gen.seed, "Seed (default: BIOUNET_SEED, then 1234)");
  g->add_option("--rates", gen.rates, "Five indicator probabilities, comma separated");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train attribute models and fuse them");
  t->add_option("--config", tr.config, "JSON run configuration");
  t->add_option("--attribute", tr.attribute, "0..4, an attribute name, or 'all'");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--seed", tr.seed);
  t->add_option("--labeled", tr.labeled, "Labeled dataset directory");
  t->add_option("--unlabeled", tr.unlabeled, "Unlabeled dataset directory");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--repeat-k", tr.repeat_k, "Segmentation updates per batch");
  t->add_option("--clr-steps", tr.clr_steps, "Contrastive steps per epoch");
  t->add_option("--seg-batches", tr.seg_batches, "Segmentation batches per epoch (0: all)");
  t->add_option("--cls-batches", tr.cls_batches, "Classification batches per epoch (0: full pass)");
  t->add_option("--patience", tr.patience, "Early stopping patience (0: off)");
  t->add_option("--mode", tr.mode, "per_attribute | two_task | five_task | six_task");
  t->add_option("--cam-method", tr.cam_method, "grad_cam | grad_cam_pp | layer_cam");
  t->add_option("--lr", tr.lr);
  t->add_flag("--no-clr", tr.no_clr, "Disable the contrastive subnetwork");
  t->add_flag("--no-seg", tr.no_seg, "Disable the segmentation subnetwork");

  ExplainOptions ex;
  auto* e = app.add_subcommand("explain", "Write per-block heatmaps and the segmentation mask for one image");
  e->add_option("--checkpoint", ex.checkpoint)->required();
  e->add_option("--image", ex.image, "PPM or PGM image")->required();
  e->add_option("--attribute", ex.attribute)->required();
  e->add_option("--method", ex.method, "grad_cam | grad_cam_pp | layer_cam");
  e->add_option("--out", ex.out)->required();
  e->add_flag("--montage", ex.montage, "Also write a side-by-side overlay");

  EvalOptions ev;
  auto* v = app.add_subcommand("eval", "Localization and diagnosis metrics");
  v->add_option("--checkpoints", ev.checkpoints, "Run directory, one checkpoint, or five")->required();
  v->add_option("--dataset", ev.dataset)->required();
  v->add_option("--methods", ev.methods)->delimiter(',');
  v->add_option("--split", ev.split);
  v->add_flag("--percent", ev.percent, "Report continuous Dice in percent");
  v->add_option("--out", ev.out)->required();

  FuseOptions fu;
  auto* f = app.add_subcommand("fuse", "Fit the diagnosis model on five encoders");
  f->add_option("--checkpoints", fu.checkpoints, "Run directory or five checkpoints")->required();
  f->add_option("--dataset", fu.dataset)->required();
  f->add_option("--out", fu.out)->required();

  std::string report_run, report_out;
  auto* r = app.add_subcommand("report", "Summarize a train output directory");
  r->add_option("--run", report_run)->required();
  r->add_option("--out", report_out);

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return kConfigFailure;
  }

  try {
    if (g->parsed()) return gen_data(gen, out);
    if (t->parsed()) return train(tr, out, err);
    if (e->parsed()) return explain(ex, out);
    if (v->parsed()) return eval(ev, out);
    if (f->parsed()) return fuse(fu, out);
    if (r->parsed()) return report(report_run, report_out, out);
  } catch (const IoError& x) {
    err << "error: " << x.what() << '\n';
    return kIoFailure;
  } catch (const NumericError& x) {
    err << "error: " << x.what() << '\n';
    return kDivergence;
  } catch (const ConfigError& x) {
    err << "error: " << x.what() << '\n';
    return kConfigFailure;
  } catch (const Error& x) {
    err << "error: " << x.what() << '\n';
    return kConfigFailure;
  } catch (const nlohmann::json::exception& x) {
    err << "error: " << x.what() << '\n';
    return kConfigFailure;
  } catch (const fs::filesystem_error& x) {
    err << "error: " << x.what() << '\n';
    return kIoFailure;
  }
  return kConfigFailure;
}

}  // namespace biounet::cli
