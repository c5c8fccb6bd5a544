#pragma once

namespace atomdet {

/// Entry point of the `atomdet` command line tool; returns the exit status.
int run_cli(int argc, char** argv);

}  // namespace atomdet
