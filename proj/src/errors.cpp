#include "cate_forge/errors.hpp"

namespace cate_forge {

ParseError::ParseError(const std::string& path, std::size_t row, const std::string& column,
                       const std::string& what)
    : InvalidInput(path + ": row " + std::to_string(row) +
                   (column.empty() ? std::string() : ", column " + column) + ": " + what),
      row_(row),
      column_(column) {}

NumericalError::NumericalError(const std::string& what, std::size_t iterations)
    : Error(what + " (after " + std::to_string(iterations) + " iterations)"),
      iterations_(iterations) {}

}  // namespace cate_forge
