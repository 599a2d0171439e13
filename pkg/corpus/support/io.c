#include <stdio.h>
#include <wchar.h>

#include "io.h"

const int GLOBAL_CONST_TRUE = 1;
const int GLOBAL_CONST_FIVE = 5;
int globalTrue = 1;
int globalFive = 5;

void printLine(const char *line)
{
    if (line != NULL)
    {
        printf("%s\n", line);
    }
}

void printWLine(const wchar_t *line)
{
    if (line != NULL)
    {
        wprintf(L"%ls\n", line);
    }
}

void printIntLine(int value)
{
    printf("%d\n", value);
}

int globalReturnsTrue(void)
{
    return 1;
}
