#pragma once

// Command-line surface: datagen, build-corpus, train-xsim, pretrain,
// rl-finetune, evaluate and generate. Exposed as a library so tests can
// drive whole pipelines in-process.

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace xlsum::cli {

// Runs one command line (without the program name). Returns the exit code;
// failures print a single `error[<tag>]: <message>` line on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// SHA-1 of "blob <size>\0" + content, as `git hash-object` prints it.
std::string git_blob_sha1(std::string_view content);

std::string read_file(const std::filesystem::path& path);
// Writes a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace xlsum::cli
