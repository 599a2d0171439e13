/* Variant 02: 10 ints memcpy'd into a 10-byte alloca; allocation under an always-true literal condition. */
#include <alloca.h>
#include <string.h>

#include "io.h"

static void bad(void)
{
    int * data;
    data = NULL;
    if (1)
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
