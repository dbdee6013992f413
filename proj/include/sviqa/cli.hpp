#pragma once

#include <iosfwd>

namespace sviqa {

// Subcommands: gen-data, train, eval, infer, bench-latency, stats.
// Exit codes: 0 success, 1 usage, 2 data/protocol/config error, 3 numeric failure.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace sviqa
