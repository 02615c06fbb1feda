// placeholder until the C API lands
extern "C" { const char* ct_version(void); }
const char* ct_version(void) { return "0.0.0"; }
