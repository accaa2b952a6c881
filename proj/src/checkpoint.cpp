#include "sparsearch/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "json_fields.hpp"

namespace sparsearch {

using detail::FieldError;
using detail::json;
using detail::StrictObject;

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

constexpr const char* kSearchFormat = "sparsearch-search-checkpoint";
constexpr const char* kModelFormat = "sparsearch-model-checkpoint";

json tensors_to_json(const std::vector<ParamRef>& refs) {
  json j = json::object();
  for (const auto& r : refs) {
    j[r.name] = {{"shape", r.tensor.shape()},
                 {"data", std::vector<double>(r.tensor.data().begin(), r.tensor.data().end())}};
  }
  return j;
}

// Every tensor in `refs` must be present with a matching shape, and nothing else.
void tensors_from_json(const json& j, const std::vector<ParamRef>& refs, const std::string& path) {
  StrictObject o(j, path);
  for (const auto& r : refs) {
    StrictObject t(o.at(r.name), o.path_of(r.name));
    const auto shape = t.get<Shape>("shape");
    const auto data = t.get<std::vector<double>>("data");
    t.finish();
    if (shape != r.tensor.shape() || data.size() != r.tensor.numel()) {
      throw FieldError(o.path_of(r.name), "shape " + shape_to_string(shape) + " does not match " +
                                              shape_to_string(r.tensor.shape()));
    }
    Tensor dst = r.tensor;
    std::copy(data.begin(), data.end(), dst.data().begin());
  }
  o.finish();
}

json normalization_to_json(const Normalization& n) { return {{"mean", n.mean}, {"std", n.std}}; }

Normalization normalization_from_json(const json& j) {
  StrictObject o(j, "normalization");
  Normalization n;
  n.mean = o.get<std::vector<double>>("mean");
  n.std = o.get<std::vector<double>>("std");
  o.finish();
  return n;
}

json graphs_to_json(const Network& net) {
  json tables = json::array();
  for (const auto& g : net.graphs()) {
    tables.push_back({{"lambda", std::vector<double>(g.lambda.data().begin(), g.lambda.data().end())},
                      {"active", std::vector<bool>(g.active.begin(), g.active.end())}});
  }
  return tables;
}

void graphs_from_json(const json& j, Network& net) {
  if (!j.is_array() || j.size() != net.graphs().size()) {
    throw FieldError("lambda_tables", "expected " + std::to_string(net.graphs().size()) + " tables");
  }
  for (std::size_t t = 0; t < j.size(); ++t) {
    BlockGraph& g = net.graphs()[t];
    StrictObject o(j[t], "lambda_tables[" + std::to_string(t) + "]");
    const auto lambda = o.get<std::vector<double>>("lambda");
    const auto active = o.get<std::vector<bool>>("active");
    o.finish();
    if (lambda.size() != g.edge_count() || active.size() != g.edge_count()) {
      throw FieldError(o.path_of("lambda"), "edge count does not match the network");
    }
    std::copy(lambda.begin(), lambda.end(), g.lambda.data().begin());
    g.active = active;
  }
}

json parse_checkpoint_json(std::string_view text, const char* format) {
  json j = detail::parse_json_text(text);
  if (!j.is_object() || !j.contains("format") || j["format"] != format) {
    throw ParseError(std::string("not a ") + format + " file", 0);
  }
  return j;
}

template <typename Fn>
auto as_parse_error(Fn&& fn) {
  try {
    return fn();
  } catch (const FieldError& e) {
    throw ParseError(e.what(), 0);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("config.") + e.what(), 0);
  }
}

}  // namespace

std::string serialize_search_checkpoint(const ExperimentConfig& config, std::string_view stage,
                                        const Normalization& normalization,
                                        const SearchState& state) {
  json j;
  j["format"] = kSearchFormat;
  j["version"] = 1;
  j["stage"] = std::string(stage);
  j["config"] = json::parse(serialize_config(config));
  j["normalization"] = normalization_to_json(normalization);
  j["pretrain_epochs_done"] = state.pretrain_epochs_done;
  j["search_epochs_done"] = state.search_epochs_done;
  j["lambda_tables"] = graphs_to_json(state.network);
  j["parameters"] = tensors_to_json(state.network.parameters());
  j["buffers"] = tensors_to_json(state.network.buffers());
  json nag = json::object();
  for (const auto& [name, v] : state.weight_opt.buffers()) nag[name] = v;
  j["weight_momentum"] = nag;
  json apg = json::array();
  for (const auto& s : state.lambda_opt) apg.push_back(s.v);
  j["lambda_momentum"] = apg;
  std::ostringstream rng;
  rng << state.rng;
  j["rng"] = rng.str();
  return j.dump() + "\n";
}

SearchCheckpoint parse_search_checkpoint(std::string_view text) {
  const json j = parse_checkpoint_json(text, kSearchFormat);
  return as_parse_error([&] {
    StrictObject o(j, "");
    o.get_string("format");
    if (o.get_int("version") != 1) throw FieldError("version", "unsupported version");
    const std::string stage = o.get_string("stage");
    const ExperimentConfig config = parse_config(o.at("config").dump());
    SearchCheckpoint ck{config, stage, normalization_from_json(o.at("normalization")),
                        SearchState(config.pipeline, config.seed)};
    SearchState& s = ck.state;
    s.pretrain_epochs_done = o.get_int("pretrain_epochs_done");
    s.search_epochs_done = o.get_int("search_epochs_done");
    graphs_from_json(o.at("lambda_tables"), s.network);
    s.network.apply_masks();
    tensors_from_json(o.at("parameters"), s.network.parameters(), "parameters");
    tensors_from_json(o.at("buffers"), s.network.buffers(), "buffers");
    s.weight_opt.buffers() =
        o.get<std::map<std::string, std::vector<double>>>("weight_momentum");
    const auto apg = o.get<std::vector<std::vector<double>>>("lambda_momentum");
    if (apg.size() != s.lambda_opt.size()) throw FieldError("lambda_momentum", "wrong table count");
    for (std::size_t t = 0; t < apg.size(); ++t) {
      if (apg[t].size() != s.lambda_opt[t].v.size()) {
        throw FieldError("lambda_momentum", "wrong edge count");
      }
      s.lambda_opt[t].v = apg[t];
    }
    std::istringstream rng(o.get_string("rng"));
    rng >> s.rng;
    if (!rng) throw FieldError("rng", "unreadable generator state");
    o.finish();
    return ck;
  });
}

std::string serialize_model_checkpoint(const ExperimentConfig& config,
                                       const ArchitectureDescriptor& descriptor,
                                       const Normalization& normalization, std::uint64_t seed,
                                       const Network& network) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = 1;
  j["config"] = json::parse(serialize_config(config));
  j["descriptor"] = json::parse(serialize_descriptor(descriptor));
  j["normalization"] = normalization_to_json(normalization);
  j["seed"] = seed;
  j["parameters"] = tensors_to_json(network.parameters());
  j["buffers"] = tensors_to_json(network.buffers());
  return j.dump() + "\n";
}

ModelCheckpoint parse_model_checkpoint(std::string_view text) {
  const json j = parse_checkpoint_json(text, kModelFormat);
  return as_parse_error([&] {
    StrictObject o(j, "");
    o.get_string("format");
    if (o.get_int("version") != 1) throw FieldError("version", "unsupported version");
    const ExperimentConfig config = parse_config(o.at("config").dump());
    const ArchitectureDescriptor descriptor = deserialize_descriptor(o.at("descriptor").dump());
    const auto seed = o.get<std::uint64_t>("seed");
    ModelCheckpoint ck{config, descriptor, normalization_from_json(o.at("normalization")), seed,
                       build_retrain_network(descriptor, seed)};
    tensors_from_json(o.at("parameters"), ck.network.parameters(), "parameters");
    tensors_from_json(o.at("buffers"), ck.network.buffers(), "buffers");
    o.finish();
    return ck;
  });
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field", text.size());
  if (any || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

MetricsCsv::MetricsCsv(std::filesystem::path path, std::size_t blocks)
    : path_(std::move(path)), blocks_(blocks) {}

std::string MetricsCsv::header() const {
  std::string h = "epoch,stage,loss,accuracy,active_edges";
  for (std::size_t b = 0; b < blocks_; ++b) h += ",flops_block" + std::to_string(b);
  h += ",gamma_min,gamma_mean,gamma_max";
  return h;
}

std::string MetricsCsv::format_row(const EpochMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << m.epoch << ',' << csv_field(m.stage) << ',' << m.loss << ',' << m.accuracy << ','
     << m.active_edges;
  for (auto f : m.block_flops) os << ',' << f;
  os << ',' << m.gamma_min << ',' << m.gamma_mean << ',' << m.gamma_max;
  return os.str();
}

void MetricsCsv::load_existing() {
  lines_.clear();
  if (!std::filesystem::exists(path_)) return;
  std::istringstream in(read_text_file(path_));
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      first = false;
      if (line != header()) throw std::runtime_error(path_.string() + " has a different header");
      continue;
    }
    if (!line.empty()) lines_.push_back(line);
  }
}

void MetricsCsv::append(const EpochMetrics& m) {
  if (m.block_flops.size() != blocks_) throw std::invalid_argument("metrics row has wrong block count");
  lines_.push_back(format_row(m));
  std::string text = header() + "\r\n";
  for (const auto& l : lines_) text += l + "\r\n";
  write_file_atomic(path_, text);
}

}  // namespace sparsearch
