#pragma once

#include "groundgen/pipeline.hpp"

#include <ostream>

namespace groundgen::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kEndpoint = 4 };

// Entry point of the groundgen command. Clients that are set are used instead of
// the configured endpoints, which lets tests observe mock call counters.
int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
            pipeline::Clients clients = {});

}  // namespace groundgen::cli
