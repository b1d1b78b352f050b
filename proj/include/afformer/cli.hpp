#pragma once

namespace afformer {

// Subcommands: synth, match, eval, gradcheck, selftest. Returns the process
// exit code; 2 for usage errors.
int cli_main(int argc, char** argv);

}  // namespace afformer
