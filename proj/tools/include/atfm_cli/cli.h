// Copyright 2026 The ATFM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// The `atfm` command-line tool as a library, so tests can drive it in
// process.

#ifndef ATFM_CLI_CLI_H_
#define ATFM_CLI_CLI_H_

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace atfm::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kContractError = 4,
  kNumericError = 5,
};

// One configurable key. The same key is a `--key` flag and a `key=value`
// line in a config file.
struct FlagSpec {
  std::string key;
  std::string value_name;
  std::string help;
  std::vector<std::string> commands;
};

const std::vector<FlagSpec>& Schema();
const std::vector<std::pair<std::string, std::string>>& Commands();

// Help text listing every subcommand and every schema key.
std::string SchemaHelp();

// key=value lines; '#' starts a comment. Throws ConfigError on malformed
// lines, duplicate keys and keys outside the schema.
std::map<std::string, std::string> ParseConfigText(const std::string& text);

// Runs one invocation; `args` excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace atfm::cli

#endif  // ATFM_CLI_CLI_H_
