#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sparsearch/block_graph.hpp"
#include "sparsearch/network.hpp"

namespace sparsearch {

// Malformed text input; `position` is the byte offset where parsing stopped
// (0 when the error is structural rather than lexical).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DescriptorOp {
  NodeId node;
  OpKind kind;
  bool operator==(const DescriptorOp&) const = default;
};

struct DescriptorEdge {
  NodeId src;
  NodeId dst;
  double lambda;  // value at prune time
  bool operator==(const DescriptorEdge&) const = default;
};

struct BlockDescriptor {
  std::vector<DescriptorOp> ops;      // (level, index) order
  std::vector<DescriptorEdge> edges;  // BlockGraph edge order
  bool operator==(const BlockDescriptor&) const = default;
};

// The searched architecture: surviving operations and edges of every block
// plus the macro-structure needed to rebuild the network.
struct ArchitectureDescriptor {
  NetworkConfig network;
  std::vector<BlockDescriptor> blocks;  // one per block, shared mode repeats the table
  std::string config_hash;
  std::uint64_t seed = 0;
  bool operator==(const ArchitectureDescriptor&) const = default;

  std::size_t active_edges() const;
};

BlockDescriptor describe_block(const BlockGraph& graph);
ArchitectureDescriptor describe_network(const Network& net, std::string config_hash,
                                        std::uint64_t seed);

// Rebuilds one graph per lambda table with the surviving edges active and
// their recorded lambda values.
std::vector<BlockGraph> graphs_from_descriptor(const ArchitectureDescriptor& d);
BlockGraph graph_from_block(const NetworkConfig& config, const BlockDescriptor& block);

// Every surviving operation has an active input and a path to the block
// output, every edge joins surviving nodes, and kinds match the level layout.
void validate_descriptor(const ArchitectureDescriptor& d);

std::string serialize_descriptor(const ArchitectureDescriptor& d);
// Throws ParseError on malformed text and ValidationError on an invalid graph.
ArchitectureDescriptor deserialize_descriptor(std::string_view text);

// One cluster per block; edge labels carry the recorded lambda.
std::string to_dot(const ArchitectureDescriptor& d);

}  // namespace sparsearch
