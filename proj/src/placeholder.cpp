namespace trajcast { int core_placeholder() { return 0; } }
