#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ct/bpe/packing.hpp"

namespace ct::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// args excludes the program name. JSON results go to out, diagnostics and
// the usage synopsis to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Block files hold one block per line as space-separated token ids; <pad>
// cells are unattended.
void save_blocks(const std::filesystem::path& path, const std::vector<bpe::TokenBlock>& blocks);
std::vector<bpe::TokenBlock> load_blocks(const std::filesystem::path& path);

}  // namespace ct::cli
