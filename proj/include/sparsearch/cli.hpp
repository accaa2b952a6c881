#pragma once

#include <iosfwd>

namespace sparsearch {

// Entry point of the `sparsearch` tool. Returns 0 on success, 2 for usage or
// configuration errors and 1 for failures while running a stage.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace sparsearch
