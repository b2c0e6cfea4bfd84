/*
 * Copyright 2026 The medcf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end: gen, split, train, eval, analyze, query, serve.

#ifndef MEDCF_CLI_H_
#define MEDCF_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace medcf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// Parses and runs one command. Results go to `out`, diagnostics and usage
// text to `err`. Returns 0 on success, 1 on a domain error (one-line message)
// and 2 on a usage error.
int Dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

// Sets the default log level from MEDCF_LOG_LEVEL (trace, debug, info, warn,
// error, off); warn when unset. Logs go to stderr.
void ConfigureLogging();

}  // namespace medcf

#endif  // MEDCF_CLI_H_
