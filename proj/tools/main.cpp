#include "ltlstm/costmodel.hpp"

#include <iostream>

int main() {
  std::cout << "ltlstm cli placeholder\n";
  return 0;
}
