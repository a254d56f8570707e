#ifndef FPRECT_CLI_HPP
#define FPRECT_CLI_HPP

namespace fprect {

// Command-line entry point. Exit codes: 0 success, 1 usage error, 2 runtime
// failure.
int cli_main(int argc, const char* const* argv);

} // namespace fprect

#endif
