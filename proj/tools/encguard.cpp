// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

#include "encguard/cli.hpp"

int main(int argc, char** argv) { return encguard::run_subcommand(argc, argv); }
