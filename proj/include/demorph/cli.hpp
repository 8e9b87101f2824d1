#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace demorph::cli {

// Entry point of the demorph_lab tool. Returns the process exit code: 0 on
// success, 1 on a runtime failure, 2 on a usage error. Failures print one line
// "error[<module>/<category>]: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);
int run(int argc, const char* const* argv);

}  // namespace demorph::cli
