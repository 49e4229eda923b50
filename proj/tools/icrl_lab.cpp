// Placeholder CLI; filled in once the library modules exist.
int main() { return 0; }
