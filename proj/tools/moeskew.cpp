// SPDX-License-Identifier: Apache-2.0

#include "moeskew/cli.hpp"

int main(int argc, char** argv) { return moeskew::cli::run(argc, argv); }
