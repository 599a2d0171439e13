/* Variant 17: 10 ints memcpy'd into a 10-byte alloca; allocation inside a single-iteration loop. */
#include <alloca.h>
#include <string.h>

#include "io.h"

static void bad(void)
{
    int * data;
    data = NULL;
    int j;
    for (j = 0; j < 1; j++)
    {
        data = (int *)alloca(10);
    }
    {
        int source[10] = {0};
        memcpy(data, source, 10*sizeof(int));
        printIntLine(data[0]);
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
