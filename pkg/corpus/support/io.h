/* Minimal stand-in for the test-suite support library. */
#ifndef CORPUS_IO_H
#define CORPUS_IO_H

#include <stddef.h>
#include <wchar.h>

void printLine(const char *line);
void printWLine(const wchar_t *line);
void printIntLine(int value);

extern const int GLOBAL_CONST_TRUE;
extern const int GLOBAL_CONST_FIVE;
extern int globalTrue;
extern int globalFive;
int globalReturnsTrue(void);

#endif
