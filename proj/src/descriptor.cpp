#include "sparsearch/descriptor.hpp"

#include <iomanip>
#include <sstream>

#include "json_fields.hpp"

namespace sparsearch {

namespace detail {

json network_to_json(const NetworkConfig& c) {
  json j;
  j["stages"] = c.stages;
  j["blocks_per_stage"] = c.blocks_per_stage;
  j["levels"] = c.levels;
  j["ops_per_level"] = c.ops_per_level;
  j["init_channels"] = c.init_channels;
  j["width_multiplier"] = c.width_multiplier;
  j["lambda_mode"] = std::string(lambda_mode_name(c.lambda_mode));
  j["num_classes"] = c.num_classes;
  j["in_channels"] = c.in_channels;
  j["image_size"] = c.image_size;
  return j;
}

NetworkConfig network_from_json(const json& j, const std::string& path) {
  StrictObject o(j, path);
  NetworkConfig c;
  c.stages = o.get_int_or("stages", c.stages);
  c.blocks_per_stage = o.get_int_or("blocks_per_stage", c.blocks_per_stage);
  c.levels = o.get_int_or("levels", c.levels);
  c.ops_per_level = o.get_int_or("ops_per_level", c.ops_per_level);
  c.init_channels = o.get_int_or("init_channels", c.init_channels);
  c.width_multiplier = o.get_number_or("width_multiplier", c.width_multiplier);
  if (o.has("lambda_mode")) {
    const std::string mode = o.get_string("lambda_mode");
    c.lambda_mode = with_field(o.path_of("lambda_mode"), [&] { return lambda_mode_from_name(mode); });
  }
  c.num_classes = o.get_int_or("num_classes", c.num_classes);
  c.in_channels = o.get_int_or("in_channels", c.in_channels);
  c.image_size = o.get_int_or("image_size", c.image_size);
  o.finish();
  with_field(path.empty() ? "network" : path, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json parse_json_text(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte);
  }
}

}  // namespace detail

using detail::json;
using detail::StrictObject;

std::size_t ArchitectureDescriptor::active_edges() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.edges.size();
  return n;
}

BlockDescriptor describe_block(const BlockGraph& graph) {
  const BlockGraph cleaned = remove_dead_ops(graph);
  const auto live = cleaned.live_ops();
  BlockDescriptor d;
  for (std::size_t slot = 0; slot < cleaned.op_count(); ++slot) {
    if (live[slot]) d.ops.push_back({cleaned.op_at(slot), cleaned.op_kind(cleaned.op_at(slot))});
  }
  for (std::size_t e = 0; e < cleaned.edge_count(); ++e) {
    if (cleaned.active[e]) {
      const Edge& edge = cleaned.edges()[e];
      d.edges.push_back({edge.src, edge.dst, cleaned.lambda[e]});
    }
  }
  return d;
}

ArchitectureDescriptor describe_network(const Network& net, std::string config_hash,
                                        std::uint64_t seed) {
  ArchitectureDescriptor d;
  d.network = net.config();
  for (std::size_t b = 0; b < net.block_count(); ++b) {
    d.blocks.push_back(describe_block(net.graph_of_block(b)));
  }
  d.config_hash = std::move(config_hash);
  d.seed = seed;
  return d;
}

BlockGraph graph_from_block(const NetworkConfig& config, const BlockDescriptor& block) {
  BlockGraph g = build_block(config.levels, config.ops_per_level);
  std::fill(g.active.begin(), g.active.end(), false);
  std::fill(g.lambda.data().begin(), g.lambda.data().end(), 0.0);
  for (const auto& e : block.edges) {
    const auto idx = g.find_edge(e.src, e.dst);
    if (!idx) {
      throw ValidationError("edge " + node_label(e.src) + "->" + node_label(e.dst) +
                            " does not exist in a " + std::to_string(config.levels) + "x" +
                            std::to_string(config.ops_per_level) + " block");
    }
    if (g.active[*idx]) {
      throw ValidationError("duplicate edge " + node_label(e.src) + "->" + node_label(e.dst));
    }
    g.active[*idx] = true;
    g.lambda[*idx] = e.lambda;
  }
  return g;
}

void validate_descriptor(const ArchitectureDescriptor& d) {
  try {
    d.network.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("network: ") + e.what());
  }
  if (d.blocks.size() != d.network.block_count()) {
    throw ValidationError("expected " + std::to_string(d.network.block_count()) +
                          " blocks, found " + std::to_string(d.blocks.size()));
  }
  for (std::size_t b = 0; b < d.blocks.size(); ++b) {
    const std::string where = "block " + std::to_string(b) + ": ";
    BlockGraph g;
    try {
      g = graph_from_block(d.network, d.blocks[b]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    const BlockGraph cleaned = remove_dead_ops(g);
    if (cleaned.active != g.active) {
      throw ValidationError(where +
                            "contains an operation without an active input or without a path "
                            "to the block output");
    }
    const auto live = g.live_ops();
    std::vector<bool> listed(g.op_count(), false);
    for (const auto& op : d.blocks[b].ops) {
      if (!g.is_op(op.node)) throw ValidationError(where + "bad operation node " + node_label(op.node));
      const std::size_t slot = g.op_slot(op.node);
      if (listed[slot]) throw ValidationError(where + "duplicate operation " + node_label(op.node));
      listed[slot] = true;
      if (op.kind != g.op_kind(op.node)) {
        throw ValidationError(where + "operation " + node_label(op.node) + " has kind " +
                              std::string(op_kind_name(op.kind)) + ", level layout requires " +
                              std::string(op_kind_name(g.op_kind(op.node))));
      }
    }
    if (listed != live) {
      throw ValidationError(where + "operation list does not match the surviving edges");
    }
    if (d.network.lambda_mode == LambdaMode::Shared && !(d.blocks[b] == d.blocks.front())) {
      throw ValidationError(where + "shared lambda mode requires identical blocks");
    }
  }
}

std::vector<BlockGraph> graphs_from_descriptor(const ArchitectureDescriptor& d) {
  validate_descriptor(d);
  std::vector<BlockGraph> out;
  const std::size_t tables = d.network.lambda_tables();
  for (std::size_t g = 0; g < tables; ++g) out.push_back(graph_from_block(d.network, d.blocks[g]));
  return out;
}

namespace {

json node_json(NodeId n) { return json::array({n.level, n.index}); }

NodeId node_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw detail::FieldError(path, "expected [level, index]");
  }
  return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

std::string serialize_descriptor(const ArchitectureDescriptor& d) {
  json j;
  j["format"] = "sparsearch-architecture";
  j["version"] = 1;
  j["network"] = detail::network_to_json(d.network);
  json widths = json::array();
  for (std::size_t s = 0; s < static_cast<std::size_t>(d.network.stages); ++s) {
    widths.push_back(d.network.stage_width(s));
  }
  j["stage_widths"] = widths;
  json blocks = json::array();
  for (const auto& b : d.blocks) {
    json ops = json::array();
    for (const auto& op : b.ops) {
      ops.push_back({{"node", node_json(op.node)}, {"kind", std::string(op_kind_name(op.kind))}});
    }
    json edges = json::array();
    for (const auto& e : b.edges) {
      edges.push_back({{"src", node_json(e.src)}, {"dst", node_json(e.dst)}, {"lambda", e.lambda}});
    }
    blocks.push_back({{"operations", ops}, {"edges", edges}});
  }
  j["blocks"] = blocks;
  j["provenance"] = {{"config_hash", d.config_hash}, {"seed", d.seed}};
  return j.dump(2) + "\n";
}

ArchitectureDescriptor deserialize_descriptor(std::string_view text) {
  const json j = detail::parse_json_text(text);
  ArchitectureDescriptor d;
  try {
    StrictObject root(j, "");
    if (root.get_string("format") != "sparsearch-architecture") {
      throw detail::FieldError("format", "not an architecture descriptor");
    }
    if (root.get_int("version") != 1) throw detail::FieldError("version", "unsupported version");
    d.network = detail::network_from_json(root.at("network"), "network");
    const json& widths = root.at("stage_widths");
    if (!widths.is_array() || widths.size() != static_cast<std::size_t>(d.network.stages)) {
      throw detail::FieldError("stage_widths", "expected one width per stage");
    }
    for (std::size_t s = 0; s < widths.size(); ++s) {
      if (!widths[s].is_number_unsigned() || widths[s].get<std::size_t>() != d.network.stage_width(s)) {
        throw detail::FieldError("stage_widths", "inconsistent with init_channels and width_multiplier");
      }
    }
    const json& blocks = root.at("blocks");
    if (!blocks.is_array()) throw detail::FieldError("blocks", "expected an array");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string bpath = "blocks[" + std::to_string(b) + "]";
      StrictObject bo(blocks[b], bpath);
      BlockDescriptor bd;
      const json& ops = bo.at("operations");
      if (!ops.is_array()) throw detail::FieldError(bpath + ".operations", "expected an array");
      for (std::size_t i = 0; i < ops.size(); ++i) {
        const std::string opath = bpath + ".operations[" + std::to_string(i) + "]";
        StrictObject oo(ops[i], opath);
        DescriptorOp op;
        op.node = node_from_json(oo.at("node"), opath + ".node");
        const std::string kind = oo.get_string("kind");
        op.kind = detail::with_field(opath + ".kind", [&] { return op_kind_from_name(kind); });
        oo.finish();
        bd.ops.push_back(op);
      }
      const json& edges = bo.at("edges");
      if (!edges.is_array()) throw detail::FieldError(bpath + ".edges", "expected an array");
      for (std::size_t i = 0; i < edges.size(); ++i) {
        const std::string epath = bpath + ".edges[" + std::to_string(i) + "]";
        StrictObject eo(edges[i], epath);
        DescriptorEdge e;
        e.src = node_from_json(eo.at("src"), epath + ".src");
        e.dst = node_from_json(eo.at("dst"), epath + ".dst");
        e.lambda = eo.get_number("lambda");
        eo.finish();
        bd.edges.push_back(e);
      }
      bo.finish();
      d.blocks.push_back(std::move(bd));
    }
    StrictObject prov(root.at("provenance"), "provenance");
    d.config_hash = prov.get_string("config_hash");
    const json& seed = prov.at("seed");
    if (!seed.is_number_unsigned()) throw detail::FieldError("provenance.seed", "expected an unsigned integer");
    d.seed = seed.get<std::uint64_t>();
    prov.finish();
    root.finish();
  } catch (const detail::FieldError& e) {
    throw ParseError(e.what(), 0);
  }
  validate_descriptor(d);
  return d;
}

std::string to_dot(const ArchitectureDescriptor& d) {
  std::ostringstream os;
  os << std::setprecision(6);
  auto id = [](std::size_t b, NodeId n) {
    return "\"b" + std::to_string(b) + "_" + std::to_string(n.level) + "_" + std::to_string(n.index) +
           "\"";
  };
  os << "digraph architecture {\n  rankdir=LR;\n";
  for (std::size_t b = 0; b < d.blocks.size(); ++b) {
    const auto& blk = d.blocks[b];
    const NodeId out{d.network.levels + 1, 0};
    os << "  subgraph cluster_block" << b << " {\n";
    os << "    label=\"block " << b << "\";\n";
    os << "    " << id(b, {0, 0}) << " [label=\"input\", shape=box];\n";
    os << "    " << id(b, out) << " [label=\"output\", shape=box];\n";
    for (const auto& op : blk.ops) {
      os << "    " << id(b, op.node) << " [label=\"" << op_kind_name(op.kind) << "\\n"
         << node_label(op.node) << "\"];\n";
    }
    if (blk.edges.empty()) {
      os << "    " << id(b, {0, 0}) << " -> " << id(b, out) << " [label=\"identity\", style=dashed];\n";
    }
    for (const auto& e : blk.edges) {
      os << "    " << id(b, e.src) << " -> " << id(b, e.dst) << " [label=\"" << e.lambda << "\"];\n";
    }
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace sparsearch
