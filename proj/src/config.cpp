#include "sparsearch/config.hpp"

#include <fstream>
#include <sstream>

#include "json_fields.hpp"

namespace sparsearch {

using detail::FieldError;
using detail::json;
using detail::StrictObject;
using detail::with_field;

std::string_view dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Synthetic: return "synthetic";
    case DatasetKind::Idx: return "idx";
    case DatasetKind::Cifar: return "cifar";
  }
  return "synthetic";
}

DatasetKind dataset_kind_from_name(std::string_view name) {
  if (name == "synthetic") return DatasetKind::Synthetic;
  if (name == "idx") return DatasetKind::Idx;
  if (name == "cifar") return DatasetKind::Cifar;
  throw std::invalid_argument("dataset kind must be synthetic, idx or cifar, got '" +
                              std::string(name) + "'");
}

namespace {

std::string_view precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_name(std::string_view name) {
  if (name == "f32") return Precision::F32;
  if (name == "f64") return Precision::F64;
  throw std::invalid_argument("precision must be f32 or f64, got '" + std::string(name) + "'");
}

std::uint64_t get_u64_or(StrictObject& o, const std::string& key, std::uint64_t fallback) {
  if (!o.has(key)) return fallback;
  const json& v = o.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw FieldError(o.path_of(key), "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

std::int64_t get_i64_or(StrictObject& o, const std::string& key, std::int64_t fallback) {
  if (!o.has(key)) return fallback;
  const json& v = o.at(key);
  if (!v.is_number_integer()) throw FieldError(o.path_of(key), "expected an integer");
  return v.get<std::int64_t>();
}

template <typename Enum, typename FromName>
Enum get_enum_or(StrictObject& o, const std::string& key, Enum fallback, FromName from_name) {
  if (!o.has(key)) return fallback;
  const std::string name = o.get_string(key);
  return with_field(o.path_of(key), [&] { return from_name(name); });
}

json schedule_to_json(const SearchSchedule& s) {
  return {{"pretrain_epochs", s.pretrain_epochs},
          {"search_epochs", s.search_epochs},
          {"prune_interval", s.prune_interval},
          {"weight_steps", s.weight_steps},
          {"lambda_steps", s.lambda_steps},
          {"batch_size", s.batch_size},
          {"lr", s.lr},
          {"lr_schedule", std::string(lr_schedule_name(s.lr_schedule))},
          {"early_stop_checks", s.early_stop_checks}};
}

SearchSchedule schedule_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  SearchSchedule s;
  s.pretrain_epochs = o.get_int_or("pretrain_epochs", s.pretrain_epochs);
  s.search_epochs = o.get_int_or("search_epochs", s.search_epochs);
  s.prune_interval = o.get_int_or("prune_interval", s.prune_interval);
  s.weight_steps = o.get_int_or("weight_steps", s.weight_steps);
  s.lambda_steps = o.get_int_or("lambda_steps", s.lambda_steps);
  s.batch_size = o.get_int_or("batch_size", s.batch_size);
  s.lr = o.get_number_or("lr", s.lr);
  s.lr_schedule = get_enum_or(o, "lr_schedule", s.lr_schedule, lr_schedule_from_name);
  s.early_stop_checks = o.get_int_or("early_stop_checks", s.early_stop_checks);
  o.finish();
  with_field(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

json dataset_to_json(const DatasetSpec& d) {
  json j;
  j["kind"] = std::string(dataset_kind_name(d.kind));
  switch (d.kind) {
    case DatasetKind::Synthetic:
      j["num_classes"] = d.num_classes;
      j["per_class"] = d.per_class;
      j["test_per_class"] = d.test_per_class;
      j["size"] = d.size;
      j["seed"] = d.seed;
      break;
    case DatasetKind::Idx:
      j["train_images"] = d.train_images;
      j["train_labels"] = d.train_labels;
      j["test_images"] = d.test_images;
      j["test_labels"] = d.test_labels;
      break;
    case DatasetKind::Cifar:
      j["train_batches"] = d.train_batches;
      j["test_batch"] = d.test_batch;
      break;
  }
  return j;
}

DatasetSpec dataset_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  DatasetSpec d;
  d.kind = get_enum_or(o, "kind", d.kind, dataset_kind_from_name);
  switch (d.kind) {
    case DatasetKind::Synthetic:
      d.num_classes = o.get_int_or("num_classes", d.num_classes);
      d.per_class = o.get_int_or("per_class", d.per_class);
      d.test_per_class = o.get_int_or("test_per_class", d.test_per_class);
      d.size = o.get_int_or("size", d.size);
      d.seed = get_u64_or(o, "seed", d.seed);
      if (d.num_classes < 2) throw FieldError(o.path_of("num_classes"), "must be >= 2");
      if (d.per_class < 1) throw FieldError(o.path_of("per_class"), "must be >= 1");
      if (d.test_per_class < 1) throw FieldError(o.path_of("test_per_class"), "must be >= 1");
      if (d.size < 8) throw FieldError(o.path_of("size"), "must be >= 8");
      break;
    case DatasetKind::Idx:
      d.train_images = o.get_string("train_images");
      d.train_labels = o.get_string("train_labels");
      d.test_images = o.get_string("test_images");
      d.test_labels = o.get_string("test_labels");
      break;
    case DatasetKind::Cifar:
      d.train_batches = o.get<std::vector<std::string>>("train_batches");
      if (d.train_batches.empty()) throw FieldError(o.path_of("train_batches"), "must not be empty");
      d.test_batch = o.get_string("test_batch");
      break;
  }
  o.finish();
  return d;
}

// The network a dataset implies; keeps network.{num_classes,in_channels,image_size}
// consistent with what will be loaded.
void check_dataset_matches(const DatasetSpec& d, const NetworkConfig& n) {
  if (d.kind == DatasetKind::Synthetic) {
    if (n.num_classes != d.num_classes) {
      throw ConfigError("network.num_classes", "must equal dataset.num_classes (" +
                                                   std::to_string(d.num_classes) + ")");
    }
    if (n.in_channels != 1) throw ConfigError("network.in_channels", "synthetic data has 1 channel");
    if (n.image_size != d.size) {
      throw ConfigError("network.image_size",
                        "must equal dataset.size (" + std::to_string(d.size) + ")");
    }
  } else if (d.kind == DatasetKind::Cifar) {
    if (n.in_channels != 3) throw ConfigError("network.in_channels", "CIFAR data has 3 channels");
    if (n.image_size != 32) throw ConfigError("network.image_size", "CIFAR images are 32x32");
    if (n.num_classes != 10) throw ConfigError("network.num_classes", "CIFAR-10 has 10 classes");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  auto wrap = [](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  };
  wrap("network", [&] { pipeline.network.validate(); });
  wrap("schedule", [&] { pipeline.schedule.validate(); });
  wrap("<root>", [&] { pipeline.validate(); });
  if (threads < 1) throw ConfigError("threads", "must be >= 1");
  if (out_dir.empty()) throw ConfigError("out_dir", "must not be empty");
  check_dataset_matches(dataset, pipeline.network);
}

std::string serialize_config(const ExperimentConfig& c) {
  const PipelineConfig& p = c.pipeline;
  json j;
  j["network"] = detail::network_to_json(p.network);
  j["schedule"] = schedule_to_json(p.schedule);
  j["budget"] = {{"policy", std::string(budget_kind_name(p.budget.kind))}, {"gamma", p.budget.gamma}};
  j["weight_decay"] = p.weight_decay;
  j["split_training"] = p.split_training;
  j["pretrain"] = p.pretrain;
  j["split_ratio"] = p.split_ratio;
  j["retrain"] = {{"epochs", p.retrain_epochs},
                  {"lr", p.retrain_lr},
                  {"lr_schedule", std::string(lr_schedule_name(p.retrain_lr_schedule))}};
  j["target_flops"] = p.target_flops;
  j["augmentation"] = {
      {"enabled", p.augmentation.enabled}, {"pad", p.augmentation.pad}, {"flip", p.augmentation.flip}};
  j["precision"] = std::string(precision_name(p.precision));
  j["dataset"] = dataset_to_json(c.dataset);
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["threads"] = c.threads;
  return j.dump(2) + "\n";
}

ExperimentConfig parse_config(std::string_view text) {
  const json j = detail::parse_json_text(text);
  try {
    StrictObject o(j, "");
    ExperimentConfig c;
    PipelineConfig& p = c.pipeline;
    if (o.has("network")) p.network = detail::network_from_json(o.at("network"), "network");
    if (o.has("schedule")) p.schedule = schedule_from_json(o.at("schedule"), "schedule");
    if (o.has("budget")) {
      StrictObject b(o.at("budget"), "budget");
      p.budget.kind = get_enum_or(b, "policy", p.budget.kind, budget_kind_from_name);
      p.budget.gamma = b.get_number_or("gamma", p.budget.gamma);
      b.finish();
      if (!(p.budget.gamma >= 0.0)) throw FieldError("budget.gamma", "must be >= 0");
    }
    p.weight_decay = o.get_number_or("weight_decay", p.weight_decay);
    p.split_training = o.get_bool_or("split_training", p.split_training);
    p.pretrain = o.get_bool_or("pretrain", p.pretrain);
    p.split_ratio = o.get_number_or("split_ratio", p.split_ratio);
    if (o.has("retrain")) {
      StrictObject r(o.at("retrain"), "retrain");
      p.retrain_epochs = r.get_int_or("epochs", p.retrain_epochs);
      p.retrain_lr = r.get_number_or("lr", p.retrain_lr);
      p.retrain_lr_schedule = get_enum_or(r, "lr_schedule", p.retrain_lr_schedule, lr_schedule_from_name);
      r.finish();
    }
    p.target_flops = get_i64_or(o, "target_flops", p.target_flops);
    if (o.has("augmentation")) {
      StrictObject a(o.at("augmentation"), "augmentation");
      p.augmentation.enabled = a.get_bool_or("enabled", p.augmentation.enabled);
      p.augmentation.pad = a.get_int_or("pad", p.augmentation.pad);
      p.augmentation.flip = a.get_bool_or("flip", p.augmentation.flip);
      a.finish();
      if (p.augmentation.pad < 0) throw FieldError("augmentation.pad", "must be >= 0");
    }
    p.precision = get_enum_or(o, "precision", p.precision, precision_from_name);
    if (o.has("dataset")) c.dataset = dataset_from_json(o.at("dataset"), "dataset");
    if (o.has("out_dir")) c.out_dir = o.get_string("out_dir");
    c.seed = get_u64_or(o, "seed", c.seed);
    c.deterministic = o.get_bool_or("deterministic", c.deterministic);
    c.threads = o.get_int_or("threads", c.threads);
    o.finish();
    p.schedule.seed = c.seed;
    c.validate();
    return c;
  } catch (const FieldError& e) {
    throw ConfigError(e.field(), std::string(e.what()).substr(e.field().size() + 2));
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

LoadedData load_data(const DatasetSpec& spec, const Normalization* normalization) {
  Dataset train, test;
  switch (spec.kind) {
    case DatasetKind::Synthetic:
      train = synth_dataset(spec.num_classes, spec.per_class, spec.size, spec.seed);
      test = synth_dataset(spec.num_classes, spec.test_per_class, spec.size,
                           spec.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
      break;
    case DatasetKind::Idx:
      train = load_idx(spec.train_images, spec.train_labels);
      test = load_idx(spec.test_images, spec.test_labels);
      break;
    case DatasetKind::Cifar: {
      for (const auto& path : spec.train_batches) {
        Dataset part = load_cifar_binary(path);
        if (train.labels.empty()) {
          train = std::move(part);
        } else {
          train.pixels.insert(train.pixels.end(), part.pixels.begin(), part.pixels.end());
          train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
        }
      }
      test = load_cifar_binary(spec.test_batch);
      break;
    }
  }
  if (train.size() == 0) throw DataError("training split is empty");
  const Normalization norm = normalization ? *normalization : compute_normalization(train);
  apply_normalization(train, norm);
  apply_normalization(test, norm);
  return {std::move(train), AuditedDataset(std::move(test)), norm};
}

}  // namespace sparsearch
