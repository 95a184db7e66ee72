// SPDX-License-Identifier: Apache-2.0
#include "stfcn/cli.hpp"

int main(int argc, char** argv) { return stfcn::run_cli(argc, argv); }
