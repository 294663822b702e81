// Writes the synthetic student-performance table used by the examples and
// the acceptance run.

#include <fstream>
#include <iostream>

#include "student_synth.hpp"

int main(int argc, char** argv)
{
    if (argc != 2) {
        std::cerr << "usage: make_student_data OUTPUT.csv\n";
        return 2;
    }
    std::ofstream out(argv[1]);
    if (!out) {
        std::cerr << "cannot write " << argv[1] << '\n';
        return 2;
    }
    out << fairgp::demo::student_synthetic_csv();
    return 0;
}
